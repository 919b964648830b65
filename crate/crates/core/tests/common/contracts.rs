//! Whole-property checks shared by the integration tests and the acceptance
//! runner. Each returns `Err` with a description of the first violation.

use inhibit_core::inhibition::{
    global_inhibit, one_layer_inhibit, posttext_inhibit, pretext_inhibit, ActivationCache, Gated,
};
use inhibit_core::layers::{Bindings, Linear, ParamStore};
use inhibit_core::model::{Model, ModelConfig};
use inhibit_core::moe::MoeLayer;
use inhibit_core::{InhibitionMode, Tape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{oracles, rng};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn f32_uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0f32..1.0))
}

/// Largest absolute gap between the sparse MoE layer and the dense-masked
/// oracle over `instances` random layers with N = 5, K = 3, B = 4.
pub fn moe_dense_gap(instances: u64) -> f64 {
    let mut worst = 0.0f64;
    for seed in 0..instances {
        let mut r = rng(seed);
        let mut params = ParamStore::<f64>::new();
        let layer = MoeLayer::new(&mut params, 5, 3, (128, 128, 10), &mut r).unwrap();
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            for v in params.value_mut(id).data_mut() {
                *v += r.random_range(-0.1..0.1);
            }
        }
        let x = Tensor::from_fn(&[4, 128], |_| r.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let bind = params.bind(&mut tape, false);
        let xid = tape.constant(x.clone());
        let out = layer.forward::<f64, ChaCha8Rng>(&mut tape, &bind, xid, None).unwrap();
        let sparse = tape.value(out.output);
        for (row, dense) in oracles::dense_moe(&params, &layer, &x).iter().enumerate() {
            for (a, b) in sparse.row(row).iter().zip(dense) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    worst
}

const WIDTH: usize = 16;
const PRE: [usize; 2] = [12, 9];
const POST: [usize; 2] = [10, 10];

/// Gate networks and inputs in f32, the training precision.
pub struct Fixture {
    pub params: ParamStore<f32>,
    pub gate: Linear,
    pub pre: Vec<Linear>,
    pub post: Vec<Linear>,
    pub z: Tensor<f32>,
    pub x: Tensor<f32>,
    pub taps: Vec<Tensor<f32>>,
    /// Warm cache holding previous batches of 5 and 3 rows.
    pub cache: ActivationCache<f32>,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut r = rng(seed);
        let mut params = ParamStore::new();
        let gate = Linear::new(&mut params, "gate", WIDTH, WIDTH, &mut r);
        let pre = PRE
            .iter()
            .enumerate()
            .map(|(i, &d)| Linear::new(&mut params, &format!("pre{i}"), d, WIDTH, &mut r))
            .collect();
        let post = POST
            .iter()
            .enumerate()
            .map(|(j, &d)| Linear::new(&mut params, &format!("post{j}"), d, WIDTH, &mut r))
            .collect();
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            for v in params.value_mut(id).data_mut() {
                *v += r.random_range(-0.2f32..0.2);
            }
        }
        let b = 4;
        let z = f32_uniform(&[b, WIDTH], &mut r);
        let x = f32_uniform(&[b, WIDTH], &mut r);
        let taps = PRE.iter().map(|&d| f32_uniform(&[b, d], &mut r)).collect();
        let mut cache = ActivationCache::new(POST.len());
        cache.store(0, &f32_uniform(&[5, POST[0]], &mut r));
        cache.store(1, &f32_uniform(&[3, POST[1]], &mut r));
        cache.finish_step();
        Self {
            params,
            gate,
            pre,
            post,
            z,
            x,
            taps,
            cache,
        }
    }

    pub fn zero(&mut self, layers: &[Linear]) {
        for l in layers {
            self.params.value_mut(l.weight).data_mut().fill(0.0);
            self.params.value_mut(l.bias).data_mut().fill(0.0);
        }
    }

    /// Output and gate values of one mechanism, evaluated on a fresh tape.
    pub fn run(&self, mode: InhibitionMode, cache: &ActivationCache<f32>) -> (Tensor<f32>, Tensor<f32>) {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let g = self.record(&mut tape, &bind, mode, cache);
        (tape.value(g.output).clone(), tape.value(g.gate).clone())
    }

    pub fn record(
        &self,
        tape: &mut Tape<f32>,
        bind: &Bindings,
        mode: InhibitionMode,
        cache: &ActivationCache<f32>,
    ) -> Gated {
        let z = tape.constant(self.z.clone());
        let x = tape.constant(self.x.clone());
        let pre: Vec<(Linear, _)> = self
            .pre
            .iter()
            .zip(&self.taps)
            .map(|(l, t)| (*l, tape.constant(t.clone())))
            .collect();
        match mode {
            InhibitionMode::OneLayer => one_layer_inhibit(tape, bind, &self.gate, z, x),
            InhibitionMode::Pretext => pretext_inhibit(tape, bind, &self.gate, &pre, z, x),
            InhibitionMode::Posttext => posttext_inhibit(tape, bind, &self.gate, &self.post, cache, z, x),
            InhibitionMode::Global => global_inhibit(tape, bind, &self.gate, &pre, &self.post, cache, z, x),
            other => panic!("{other} has no gate"),
        }
        .unwrap()
    }
}

fn bitwise(a: &Tensor<f32>, b: &Tensor<f32>) -> bool {
    a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn same(what: &str, a: &(Tensor<f32>, Tensor<f32>), b: &(Tensor<f32>, Tensor<f32>)) -> Check {
    ensure(bitwise(&a.0, &b.0) && bitwise(&a.1, &b.1), || format!("{what}: outputs differ"))
}

/// Copies every parameter `dst` shares by name with `src`.
pub fn copy_shared(src: &Model<f32>, dst: &mut Model<f32>) {
    let names: Vec<String> = dst.params().iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        if let Some(id) = src.params().find(&name) {
            dst.params_mut().set(&name, src.params().value(id).clone()).unwrap();
        }
    }
}

fn model(mode: InhibitionMode, seed: u64) -> Model<f32> {
    let config = ModelConfig {
        inhibition: mode,
        ..ModelConfig::default()
    };
    Model::new(config, &mut rng(seed)).unwrap()
}

fn images(batch: usize, seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn(&[batch, 1, 28, 28], |_| r.random::<f32>())
}

fn zero_params(model: &mut Model<f32>, prefix: &str) {
    let names: Vec<String> = model
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let id = model.params().find(&name).unwrap();
        model.params_mut().value_mut(id).data_mut().fill(0.0);
    }
}

/// Warms a model's post-text cache with one training-mode forward pass.
pub fn warm(model: &mut Model<f32>, seed: u64) {
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape, false);
    let x = tape.constant(images(6, seed));
    model.forward(&mut tape, &bind, x, Some(&mut rng(seed))).unwrap();
}

/// Zeroing the extra sub-networks collapses global to pre-text to one-layer,
/// bitwise, for the bare mechanisms and for whole models.
pub fn reduction_chain(seed: u64) -> Check {
    let mut f = Fixture::new(seed);
    let cache = f.cache.clone();
    let post = f.post.clone();
    f.zero(&post);
    let global = f.run(InhibitionMode::Global, &cache);
    let pretext = f.run(InhibitionMode::Pretext, &cache);
    same("global without post-text vs pretext", &global, &pretext)?;
    let pre = f.pre.clone();
    f.zero(&pre);
    let pretext = f.run(InhibitionMode::Pretext, &cache);
    let one = f.run(InhibitionMode::OneLayer, &cache);
    same("pretext without pre-text vs one-layer", &pretext, &one)?;
    let global = f.run(InhibitionMode::Global, &cache);
    same("global without extras vs one-layer", &global, &one)?;

    let mut full = model(InhibitionMode::Global, seed);
    warm(&mut full, seed);
    zero_params(&mut full, "inhibit.post");
    let imgs = images(3, seed + 1);
    let mut pre_model = model(InhibitionMode::Pretext, seed + 7);
    copy_shared(&full, &mut pre_model);
    let a = full.predict(&imgs).unwrap();
    let b = pre_model.predict(&imgs).unwrap();
    ensure(bitwise(&a.logits, &b.logits), || "global model vs pretext model logits differ".into())?;
    zero_params(&mut full, "inhibit.pre");
    let mut glu = model(InhibitionMode::OneLayer, seed + 8);
    copy_shared(&full, &mut glu);
    let a = full.predict(&imgs).unwrap();
    let c = glu.predict(&imgs).unwrap();
    ensure(bitwise(&a.logits, &c.logits), || "global model vs glu model logits differ".into())?;
    ensure(bitwise(a.gate.as_ref().unwrap(), c.gate.as_ref().unwrap()), || {
        "global model vs glu model gates differ".into()
    })
}

/// (a) With an empty cache the post-text mechanisms equal their
/// cache-free counterparts bitwise.
pub fn cold_start(seed: u64) -> Check {
    let f = Fixture::new(seed);
    let empty = ActivationCache::new(POST.len());
    same(
        "cold posttext vs one-layer",
        &f.run(InhibitionMode::Posttext, &empty),
        &f.run(InhibitionMode::OneLayer, &empty),
    )?;
    same(
        "cold global vs pretext",
        &f.run(InhibitionMode::Global, &empty),
        &f.run(InhibitionMode::Pretext, &empty),
    )?;
    let mut post = model(InhibitionMode::Posttext, seed);
    let mut glu = model(InhibitionMode::OneLayer, seed + 3);
    copy_shared(&post, &mut glu);
    let imgs = images(2, seed);
    let a = post.predict(&imgs).unwrap();
    let b = glu.predict(&imgs).unwrap();
    ensure(bitwise(&a.logits, &b.logits), || "cold posttext model vs glu model differ".into())
}

/// (b) The post-text term of step `k` depends only on step `k - 1`: changing
/// step `k`'s images leaves it bitwise unchanged while the gate moves.
pub fn cache_lag(seed: u64) -> Check {
    for mode in [InhibitionMode::Posttext, InhibitionMode::Global] {
        let mut base = model(mode, seed);
        warm(&mut base, seed);
        let imgs = images(4, seed + 11);
        let mut perturbed = imgs.clone();
        for v in perturbed.data_mut().iter_mut().step_by(3) {
            *v = 1.0 - *v;
        }
        let mut terms = Vec::new();
        for batch in [imgs, perturbed] {
            let mut m = base.clone();
            let mut tape = Tape::new();
            let bind = m.params().bind(&mut tape, true);
            let x = tape.constant(batch);
            let out = m.forward(&mut tape, &bind, x, Some(&mut rng(seed))).unwrap();
            let term = out.posttext.ok_or(format!("{mode}: warm cache yields no post-text term"))?;
            terms.push((tape.value(term).clone(), tape.value(out.gate.unwrap()).clone()));
        }
        ensure(bitwise(&terms[0].0, &terms[1].0), || {
            format!("{mode}: post-text term changed with the current batch")
        })?;
        ensure(!bitwise(&terms[0].1, &terms[1].1), || {
            format!("{mode}: gate did not react to the current batch")
        })?;
    }
    Ok(())
}

/// (c) Cached activations are constants on the tape: they receive no
/// gradient, and on a cold step the post-text nets get none either.
pub fn cache_detached(seed: u64) -> Check {
    for mode in [InhibitionMode::Posttext, InhibitionMode::Global] {
        let mut m = model(mode, seed);
        let post_ids: Vec<_> = (0..2)
            .flat_map(|j| {
                let p = m.params();
                [
                    p.find(&format!("inhibit.post{j}.weight")).unwrap(),
                    p.find(&format!("inhibit.post{j}.bias")).unwrap(),
                ]
            })
            .collect();
        for step in 0..2 {
            let snapshot: Vec<Tensor<f32>> = (0..2).filter_map(|j| m.inhibition().cache().get(j).cloned()).collect();
            let mut tape = Tape::new();
            let bind = m.params().bind(&mut tape, true);
            let x = tape.constant(images(3, seed + step));
            let out = m.forward(&mut tape, &bind, x, Some(&mut rng(seed))).unwrap();
            let loss = tape.cross_entropy(out.logits, &[1, 4, 7]).unwrap();
            tape.backward(loss).unwrap();
            let cached_nodes: Vec<_> = tape
                .node_ids()
                .filter(|&id| snapshot.iter().any(|s| bitwise(tape.value(id), s)))
                .collect();
            ensure(cached_nodes.len() == snapshot.len(), || {
                format!("{mode} step {step}: found {} cached nodes, expected {}", cached_nodes.len(), snapshot.len())
            })?;
            for id in cached_nodes {
                ensure(!tape.requires_grad(id) && tape.grad(id).is_none(), || {
                    format!("{mode} step {step}: cached activation received a gradient")
                })?;
            }
            let post_grad: f32 = post_ids
                .iter()
                .filter_map(|&p| tape.grad(bind.get(p)))
                .map(|g| g.data().iter().map(|v| v.abs()).sum::<f32>())
                .sum();
            if step == 0 {
                ensure(post_grad == 0.0, || format!("{mode}: cold step reached the post-text nets"))?;
            } else {
                ensure(post_grad > 0.0, || format!("{mode}: warm step gave the post-text nets no gradient"))?;
            }
        }
    }
    Ok(())
}
