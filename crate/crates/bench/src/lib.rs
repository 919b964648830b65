//! Input builders shared by the benchmarks.

use inhibit_core::data::{build_mixed_dataset, gen_squares, Dataset, DatasetSplit, Sample, SquaresConfig, TypeTag};
use inhibit_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// File-free stand-in for the mixed dataset: squares on both halves.
pub fn dataset(per_type: usize) -> (Dataset, DatasetSplit) {
    let cfg = SquaresConfig::default();
    let digits = gen_squares(per_type, 7, &cfg)
        .expect("valid config")
        .into_iter()
        .map(|s| Sample::new(Box::new(*s.pixels()), s.label(), TypeTag::Digit).expect("valid label"))
        .collect();
    let squares = gen_squares(per_type, 8, &cfg).expect("valid config");
    build_mixed_dataset(digits, squares, 0).expect("equal halves")
}
