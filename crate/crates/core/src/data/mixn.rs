//! `MIXN` dataset file: little-endian header `{"MIXN", version u32, count u32}`
//! followed by `{label u8, type u8, 784 pixel bytes}` per sample.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, Sample, TypeTag, PIXELS};
use crate::error::{Error, Result};

pub const MIXN_MAGIC: &[u8; 4] = b"MIXN";
pub const MIXN_VERSION: u32 = 1;
/// Bytes per sample record.
pub const MIXN_RECORD: usize = 2 + PIXELS;

pub fn write_mixn(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MIXN_MAGIC)?;
    w.write_all(&MIXN_VERSION.to_le_bytes())?;
    let count = u32::try_from(samples.len()).map_err(|_| Error::Config("too many samples for MIXN".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for s in samples {
        w.write_all(&[s.label(), s.type_tag().code()])?;
        w.write_all(s.pixels())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mixn(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: "file truncated inside header".into(),
        });
    }
    if &bytes[..4] != MIXN_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "missing MIXN magic".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MIXN_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != count * MIXN_RECORD {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("expected {} record bytes, found {}", count * MIXN_RECORD, body.len()),
        });
    }
    let mut samples = Vec::with_capacity(count);
    for (i, rec) in body.chunks_exact(MIXN_RECORD).enumerate() {
        let offset = (12 + i * MIXN_RECORD) as u64;
        let tag = TypeTag::from_code(rec[1]).ok_or_else(|| Error::Format {
            offset: offset + 1,
            msg: format!("unknown type code {}", rec[1]),
        })?;
        let px: Box<[u8; PIXELS]> = rec[2..].to_vec().into_boxed_slice().try_into().expect("record holds one image");
        let sample = Sample::new(px, rec[0], tag).map_err(|_| Error::Format {
            offset,
            msg: format!("label {} outside 0..=9", rec[0]),
        })?;
        samples.push(sample);
    }
    Ok(Dataset::new(samples))
}
