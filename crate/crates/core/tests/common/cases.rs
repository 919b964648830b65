//! Random gradient-check instances for every differentiable primitive, the
//! inhibition mechanisms, the layers and the whole model.

use inhibit_core::inhibition::{
    dropout_inhibit, global_inhibit, one_layer_inhibit, posttext_inhibit, pretext_inhibit, ActivationCache,
};
use inhibit_core::layers::{ConvBackbone, Linear, Mlp, ParamStore};
use inhibit_core::model::{Model, ModelConfig};
use inhibit_core::moe::MoeLayer;
use inhibit_core::{InhibitionMode, Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grad::{check_store, max_rel_error};
use super::{away_from_zero, distinct, rng, uniform};

pub const INSTANCES: u64 = 20;
/// Tolerance for the elementwise/scalar primitives.
pub const SCALAR_TOL: f64 = 1e-4;
pub const SIGMOID_TOL: f64 = 1e-5;
pub const TOL: f64 = 1e-3;

pub struct GradCase {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn(u64) -> Result<f64>,
}

pub const CASES: &[GradCase] = &[
    GradCase { name: "matmul", tol: SCALAR_TOL, run: matmul },
    GradCase { name: "linear", tol: SCALAR_TOL, run: linear },
    GradCase { name: "add", tol: SCALAR_TOL, run: add },
    GradCase { name: "mul", tol: SCALAR_TOL, run: mul },
    GradCase { name: "add_row", tol: SCALAR_TOL, run: add_row },
    GradCase { name: "relu", tol: SCALAR_TOL, run: relu },
    GradCase { name: "sigmoid", tol: SIGMOID_TOL, run: sigmoid },
    GradCase { name: "softmax", tol: SCALAR_TOL, run: softmax },
    GradCase { name: "reshape_sum_mean", tol: SCALAR_TOL, run: reshape_sum_mean },
    GradCase { name: "conv2d", tol: TOL, run: conv2d },
    GradCase { name: "maxpool2d", tol: SCALAR_TOL, run: maxpool2d },
    GradCase { name: "max_rows", tol: SCALAR_TOL, run: max_rows },
    GradCase { name: "cross_entropy", tol: SCALAR_TOL, run: cross_entropy },
    GradCase { name: "gather_rows", tol: SCALAR_TOL, run: gather_rows },
    GradCase { name: "select", tol: SCALAR_TOL, run: select },
    GradCase { name: "scale_rows", tol: SCALAR_TOL, run: scale_rows },
    GradCase { name: "scatter_rows", tol: SCALAR_TOL, run: scatter_rows },
    GradCase { name: "dropout_inhibit", tol: SCALAR_TOL, run: dropout },
    GradCase { name: "one_layer_inhibit", tol: SCALAR_TOL, run: one_layer },
    GradCase { name: "pretext_inhibit", tol: TOL, run: pretext },
    GradCase { name: "posttext_inhibit", tol: TOL, run: posttext },
    GradCase { name: "global_inhibit", tol: TOL, run: global },
    GradCase { name: "mlp", tol: TOL, run: mlp },
    GradCase { name: "backbone", tol: TOL, run: backbone },
    GradCase { name: "moe", tol: TOL, run: moe },
    GradCase { name: "full_model", tol: TOL, run: full_model },
];

/// Worst error over the standard number of seeded instances.
pub fn worst_over_instances(case: &GradCase) -> Result<f64> {
    let mut worst = 0.0f64;
    for seed in 0..INSTANCES {
        worst = worst.max((case.run)(seed)?);
    }
    Ok(worst)
}

fn store_with(tensors: Vec<Tensor<f64>>) -> (ParamStore<f64>, Vec<inhibit_core::layers::ParamId>) {
    let mut p = ParamStore::new();
    let ids = tensors.into_iter().enumerate().map(|(i, t)| p.add(format!("in{i}"), t)).collect();
    (p, ids)
}

/// Randomizes every parameter so zero-initialized biases are exercised too.
fn jitter(params: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.value_mut(id).data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
}

fn matmul(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[4, 3], 1.0, &mut r), uniform(&[3, 2], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.matmul(b.get(ids[0]), b.get(ids[1])), seed)
}

fn linear(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![
        uniform(&[3, 4], 1.0, &mut r),
        uniform(&[2, 4], 1.0, &mut r),
        uniform(&[2], 1.0, &mut r),
    ]);
    check_store(&mut p, |t, b| t.linear(b.get(ids[0]), b.get(ids[1]), b.get(ids[2])), seed)
}

fn add(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 4], 1.0, &mut r), uniform(&[3, 4], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.add(b.get(ids[0]), b.get(ids[1])), seed)
}

fn mul(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 4], 1.0, &mut r), uniform(&[3, 4], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.mul(b.get(ids[0]), b.get(ids[1])), seed)
}

fn add_row(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 4], 1.0, &mut r), uniform(&[1, 4], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.add_row(b.get(ids[0]), b.get(ids[1])), seed)
}

fn relu(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![away_from_zero(&[3, 5], 1e-2, &mut r)]);
    check_store(&mut p, |t, b| t.relu(b.get(ids[0])), seed)
}

fn sigmoid(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[10], 4.0, &mut r)]);
    check_store(&mut p, |t, b| t.sigmoid(b.get(ids[0])), seed)
}

fn softmax(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 5], 2.0, &mut r)]);
    check_store(&mut p, |t, b| t.softmax(b.get(ids[0])), seed)
}

fn reshape_sum_mean(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[2, 6], 1.0, &mut r), uniform(&[3, 4], 1.0, &mut r)]);
    check_store(
        &mut p,
        |t, b| {
            let x = t.reshape(b.get(ids[0]), &[3, 4])?;
            let y = t.mul(x, b.get(ids[1]))?;
            let s = t.sum(y)?;
            let m = t.mean(b.get(ids[1]))?;
            t.mul(s, m)
        },
        seed,
    )
}

fn conv2d(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![
        uniform(&[2, 1, 6, 6], 1.0, &mut r),
        uniform(&[3, 1, 3, 3], 1.0, &mut r),
        uniform(&[3], 1.0, &mut r),
    ]);
    check_store(&mut p, |t, b| t.conv2d(b.get(ids[0]), b.get(ids[1]), b.get(ids[2])), seed)
}

fn maxpool2d(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![distinct(&[1, 1, 4, 4], 0.1, &mut r)]);
    check_store(&mut p, |t, b| t.maxpool2d(b.get(ids[0])), seed)
}

fn max_rows(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![distinct(&[4, 5], 0.1, &mut r)]);
    check_store(&mut p, |t, b| t.max_rows(b.get(ids[0])), seed)
}

fn cross_entropy(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let labels: Vec<usize> = (0..3).map(|_| r.random_range(0..10)).collect();
    let (mut p, ids) = store_with(vec![uniform(&[3, 10], 3.0, &mut r)]);
    check_store(&mut p, |t, b| t.cross_entropy(b.get(ids[0]), &labels), seed)
}

fn gather_rows(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[4, 3], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.gather_rows(b.get(ids[0]), &[2, 0, 2]), seed)
}

fn select(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 4], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.select(b.get(ids[0]), &[5, 0, 11, 5], &[2, 2]), seed)
}

fn scale_rows(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[3, 4], 1.0, &mut r), uniform(&[3], 1.0, &mut r)]);
    check_store(&mut p, |t, b| t.scale_rows(b.get(ids[0]), b.get(ids[1])), seed)
}

fn scatter_rows(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[2, 3], 1.0, &mut r), uniform(&[1, 3], 1.0, &mut r)]);
    check_store(
        &mut p,
        |t, b| t.scatter_rows(4, vec![(b.get(ids[0]), vec![0, 2]), (b.get(ids[1]), vec![2])]),
        seed,
    )
}

fn dropout(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let (mut p, ids) = store_with(vec![uniform(&[4, 6], 1.0, &mut r)]);
    check_store(
        &mut p,
        |t, b| dropout_inhibit(t, b.get(ids[0]), 0.5, Some(&mut rng(seed + 1000))),
        seed,
    )
}

const WIDTH: usize = 8;

struct GateFixture {
    params: ParamStore<f64>,
    z: inhibit_core::layers::ParamId,
    x: inhibit_core::layers::ParamId,
    taps: Vec<inhibit_core::layers::ParamId>,
    gate: Linear,
    pre: Vec<Linear>,
    post: Vec<Linear>,
    cache: ActivationCache<f64>,
}

/// Two pre-text taps (widths 6 and 5) and two post-text taps (width 10,
/// cached from previous batches of 4 and 2 rows).
fn gate_fixture(seed: u64) -> GateFixture {
    let mut r = rng(seed);
    let mut params = ParamStore::new();
    let z = params.add("z", uniform(&[3, WIDTH], 1.0, &mut r));
    let x = params.add("x", uniform(&[3, WIDTH], 1.0, &mut r));
    let taps = vec![
        params.add("x1", uniform(&[3, 6], 1.0, &mut r)),
        params.add("x2", uniform(&[3, 5], 1.0, &mut r)),
    ];
    let gate = Linear::new(&mut params, "gate", WIDTH, WIDTH, &mut r);
    let pre = vec![
        Linear::new(&mut params, "pre0", 6, WIDTH, &mut r),
        Linear::new(&mut params, "pre1", 5, WIDTH, &mut r),
    ];
    let post = vec![
        Linear::new(&mut params, "post0", 10, WIDTH, &mut r),
        Linear::new(&mut params, "post1", 10, WIDTH, &mut r),
    ];
    jitter(&mut params, &mut r);
    let mut cache = ActivationCache::new(2);
    cache.store(0, &distinct(&[4, 10], 0.05, &mut r));
    cache.store(1, &distinct(&[2, 10], 0.05, &mut r));
    cache.finish_step();
    GateFixture {
        params,
        z,
        x,
        taps,
        gate,
        pre,
        post,
        cache,
    }
}

fn one_layer(seed: u64) -> Result<f64> {
    let mut f = gate_fixture(seed);
    let (z, x, gate) = (f.z, f.x, f.gate);
    check_store(
        &mut f.params,
        |t, b| Ok(one_layer_inhibit(t, b, &gate, b.get(z), b.get(x))?.output),
        seed,
    )
}

fn pretext(seed: u64) -> Result<f64> {
    let mut f = gate_fixture(seed);
    let (z, x, gate, pre, taps) = (f.z, f.x, f.gate, f.pre.clone(), f.taps.clone());
    check_store(
        &mut f.params,
        |t, b| {
            let paired: Vec<_> = pre.iter().copied().zip(taps.iter().map(|&i| b.get(i))).collect();
            Ok(pretext_inhibit(t, b, &gate, &paired, b.get(z), b.get(x))?.output)
        },
        seed,
    )
}

fn posttext(seed: u64) -> Result<f64> {
    let mut f = gate_fixture(seed);
    let (z, x, gate, post, cache) = (f.z, f.x, f.gate, f.post.clone(), f.cache.clone());
    check_store(
        &mut f.params,
        |t, b| Ok(posttext_inhibit(t, b, &gate, &post, &cache, b.get(z), b.get(x))?.output),
        seed,
    )
}

fn global(seed: u64) -> Result<f64> {
    let mut f = gate_fixture(seed);
    let (z, x, gate, pre, post, taps, cache) =
        (f.z, f.x, f.gate, f.pre.clone(), f.post.clone(), f.taps.clone(), f.cache.clone());
    check_store(
        &mut f.params,
        |t, b| {
            let paired: Vec<_> = pre.iter().copied().zip(taps.iter().map(|&i| b.get(i))).collect();
            Ok(global_inhibit(t, b, &gate, &paired, &post, &cache, b.get(z), b.get(x))?.output)
        },
        seed,
    )
}

fn mlp(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    let x = p.add("x", away_from_zero(&[3, 5], 0.05, &mut r));
    let net = Mlp::new(&mut p, "mlp", 5, 6, 4, &mut r);
    jitter(&mut p, &mut r);
    check_store(&mut p, |t, b| net.forward(t, b, b.get(x)), seed)
}

/// 50 randomly chosen coordinates per instance.
const SUBSAMPLE: usize = 50;

fn backbone(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    let images = Tensor::from_fn(&[2, 1, 28, 28], |_| r.random::<f64>());
    let net = ConvBackbone::new(&mut p, &mut r);
    max_rel_error(
        &mut p,
        |p| p,
        |_, t, b| {
            let x = t.constant(images.clone());
            Ok(net.forward(t, b, x)?.features)
        },
        Some(SUBSAMPLE),
        seed,
    )
}

fn moe(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    let x = p.add("x", uniform(&[4, 6], 1.0, &mut r));
    let layer = MoeLayer::new(&mut p, 5, 3, (6, 7, 4), &mut r)?;
    jitter(&mut p, &mut r);
    check_store(
        &mut p,
        |t, b| Ok(layer.forward::<f64, ChaCha8Rng>(t, b, b.get(x), None)?.output),
        seed,
    )
}

/// Global-inhibition MoE model on a 4-sample batch with a warm post-text
/// cache; the loss is the training cross-entropy.
fn full_model(seed: u64) -> Result<f64> {
    let mut r = rng(seed);
    let config = ModelConfig {
        inhibition: InhibitionMode::Global,
        ..ModelConfig::default()
    };
    let mut model = Model::<f64>::new(config, &mut r)?;
    let images = Tensor::from_fn(&[4, 1, 28, 28], |_| r.random::<f64>());
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..10)).collect();
    let cache = model.inhibition_mut().cache_mut();
    cache.store(0, &uniform(&[3, 10], 2.0, &mut r));
    cache.store(1, &uniform(&[3, 10], 1.0, &mut r));
    cache.finish_step();
    max_rel_error(
        &mut model,
        |m| m.params_mut(),
        |m, t, b| {
            let x = t.constant(images.clone());
            let out = m.forward::<ChaCha8Rng>(t, b, x, None)?;
            t.cross_entropy(out.logits, &labels)
        },
        Some(SUBSAMPLE),
        seed,
    )
}
