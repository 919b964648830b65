//! `MCKP` checkpoints: little-endian header `{"MCKP", version u32, count u32}`
//! then named blobs `{name_len u32, name, rank u32, dims u32[rank], f32 data}`.
//!
//! Besides parameters, a checkpoint holds `meta.*` scalars describing the
//! architecture and `cache.post*` blobs with the frozen post-text cache.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inhibition::InhibitionMode;
use crate::model::{Arch, Model, ModelConfig};
use crate::tensor::Tensor;

pub const MCKP_MAGIC: &[u8; 4] = b"MCKP";
pub const MCKP_VERSION: u32 = 1;

fn push_blob(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend((d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

fn meta(config: &ModelConfig, cache_iteration: u64) -> Vec<(&'static str, f32)> {
    vec![
        ("meta.arch", if config.arch == Arch::Moe { 1.0 } else { 0.0 }),
        ("meta.inhibition", config.inhibition.code() as f32),
        ("meta.experts", config.experts as f32),
        ("meta.top_k", config.top_k as f32),
        ("meta.dropout_p", config.dropout_p as f32),
        ("meta.router_noise", config.router_noise as f32),
        ("meta.cache_iteration", cache_iteration as f32),
    ]
}

pub fn checkpoint_bytes(model: &Model<f32>) -> Vec<u8> {
    let cache = model.inhibition().cache();
    let metas = meta(model.config(), cache.iteration());
    let cached: Vec<(String, &Tensor<f32>)> = (0..cache.taps())
        .filter_map(|j| cache.get(j).map(|t| (format!("cache.post{j}"), t)))
        .collect();
    let count = metas.len() + model.params().len() + cached.len();
    let mut out = Vec::new();
    out.extend(MCKP_MAGIC);
    out.extend(MCKP_VERSION.to_le_bytes());
    out.extend((count as u32).to_le_bytes());
    for (name, v) in metas {
        push_blob(&mut out, name, &Tensor::scalar(v));
    }
    for (name, t) in model.params().iter() {
        push_blob(&mut out, name, t);
    }
    for (name, t) in cached {
        push_blob(&mut out, &name, t);
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &Model<f32>) -> Result<()> {
    fs::write(path, checkpoint_bytes(model))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("truncated: wanted {n} more bytes"),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn parse_blobs(bytes: &[u8]) -> Result<BTreeMap<String, Tensor<f32>>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MCKP_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "missing MCKP magic".into(),
        });
    }
    let version = r.u32()?;
    if version != MCKP_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u32()?;
    let mut blobs = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos as u64;
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            msg: "blob name is not UTF-8".into(),
        })?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = dims.iter().product();
        let data = r
            .take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&dims, data).map_err(|e| Error::Format {
            offset: at,
            msg: e.to_string(),
        })?;
        blobs.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos as u64,
            msg: "trailing bytes after last blob".into(),
        });
    }
    Ok(blobs)
}

fn meta_value(blobs: &mut BTreeMap<String, Tensor<f32>>, name: &str) -> Result<f32> {
    blobs.remove(name).map(|t| t.item()).ok_or_else(|| Error::Format {
        offset: 0,
        msg: format!("checkpoint lacks `{name}`"),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = fs::read(path)?;
    let mut blobs = parse_blobs(&bytes)?;
    let inhibition = InhibitionMode::from_code(meta_value(&mut blobs, "meta.inhibition")? as u8).ok_or_else(|| {
        Error::Format {
            offset: 0,
            msg: "unknown inhibition code".into(),
        }
    })?;
    let config = ModelConfig {
        arch: if meta_value(&mut blobs, "meta.arch")? == 1.0 {
            Arch::Moe
        } else {
            Arch::Baseline
        },
        experts: meta_value(&mut blobs, "meta.experts")? as usize,
        top_k: meta_value(&mut blobs, "meta.top_k")? as usize,
        inhibition,
        dropout_p: meta_value(&mut blobs, "meta.dropout_p")? as f64,
        router_noise: meta_value(&mut blobs, "meta.router_noise")? as f64,
    };
    let cache_iteration = meta_value(&mut blobs, "meta.cache_iteration")? as u64;
    let mut model = Model::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<String> = model.params().iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let t = blobs.remove(&name).ok_or_else(|| Error::Format {
            offset: 0,
            msg: format!("checkpoint lacks parameter `{name}`"),
        })?;
        model.params_mut().set(&name, t)?;
    }
    let taps = model.inhibition().cache().taps();
    let entries = (0..taps).map(|j| blobs.remove(&format!("cache.post{j}"))).collect();
    model.inhibition_mut().cache_mut().restore(cache_iteration, entries)?;
    if let Some(extra) = blobs.keys().next() {
        return Err(Error::Format {
            offset: 0,
            msg: format!("unexpected blob `{extra}`"),
        });
    }
    Ok(model)
}
