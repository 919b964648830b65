//! Oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod cases;
pub mod contracts;

use inhibit_core::Tensor;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-scale, scale)`.
pub fn uniform(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Uniform values kept at least `gap` away from zero, so ReLU kinks stay out
/// of reach of a finite-difference step.
pub fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random::<bool>() {
            v
        } else {
            -v
        }
    })
}

/// A shuffled arithmetic progression: all values distinct and spaced by
/// `step`, so max-style ops have no near ties.
pub fn distinct(shape: &[usize], step: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * step).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

use std::path::PathBuf;

use inhibit_core::data::{
    build_mixed_dataset, gen_squares, load_mnist_idx, Dataset, DatasetSplit, Sample, SquaresConfig, TypeTag,
};

/// Digits for the mixed dataset, from the copy of MNIST kept in the repo.
pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// `digits` MNIST digits plus as many squares, shuffled and split 80/10/10.
pub fn mixed(digits: usize, seed: u64) -> (Dataset, DatasetSplit) {
    let dir = mnist_dir();
    let mut mnist = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))
        .expect("MNIST IDX files under data/mnist");
    mnist.truncate(digits);
    let squares = gen_squares(digits, 1, &SquaresConfig::default()).unwrap();
    build_mixed_dataset(mnist, squares, seed).unwrap()
}

/// A dataset that needs no files: squares re-tagged as digits stand in for
/// the digit half.
pub fn synthetic(per_type: usize, seed: u64) -> (Dataset, DatasetSplit) {
    let cfg = SquaresConfig::default();
    let fake: Vec<Sample> = gen_squares(per_type, seed + 100, &cfg)
        .unwrap()
        .into_iter()
        .map(|s| Sample::new(Box::new(*s.pixels()), s.label(), TypeTag::Digit).unwrap())
        .collect();
    let squares = gen_squares(per_type, seed, &cfg).unwrap();
    build_mixed_dataset(fake, squares, seed).unwrap()
}
