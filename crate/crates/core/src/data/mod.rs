//! The mixed-numbers dataset: MNIST digits plus rendered square counts.

mod idx;
mod mixn;
mod squares;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::image_batch;
use crate::tensor::{Real, Tensor};

pub use idx::{load_mnist_idx, parse_idx_images, parse_idx_labels, IMAGE_MAGIC, LABEL_MAGIC};
pub use mixn::{read_mixn, write_mixn, MIXN_MAGIC, MIXN_RECORD, MIXN_VERSION};
pub use squares::{gen_squares, render_squares, SquaresConfig};

pub const PIXELS: usize = 28 * 28;

/// Which population a sample was drawn from. Never shown to the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TypeTag {
    Digit,
    Squares,
}

impl TypeTag {
    /// Binary encoding used by the file format and the correlation analysis.
    pub fn code(self) -> u8 {
        match self {
            Self::Digit => 0,
            Self::Squares => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Digit),
            1 => Some(Self::Squares),
            _ => None,
        }
    }
}

/// One 28x28 grayscale image stored as bytes (`value / 255` in `[0, 1]`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pixels: Box<[u8; PIXELS]>,
    label: u8,
    type_tag: TypeTag,
}

impl Sample {
    pub fn new(pixels: Box<[u8; PIXELS]>, label: u8, type_tag: TypeTag) -> Result<Self> {
        if label > 9 {
            return Err(Error::Index {
                what: "sample label",
                index: label as usize,
                limit: 10,
            });
        }
        Ok(Self {
            pixels,
            label,
            type_tag,
        })
    }

    pub fn pixels(&self) -> &[u8; PIXELS] {
        &self.pixels
    }

    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn type_tag(&self) -> TypeTag {
        self.type_tag
    }
}

/// Model-facing batch: images and labels only.
#[derive(Clone, Debug)]
pub struct Batch<T: Real = f32> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
}

/// Train / validation / test index lists.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    /// Contiguous 80/10/10 split of `0..n` (the samples are already shuffled).
    pub fn by_ratio(n: usize, seed: u64) -> Self {
        let train = n * 8 / 10;
        let val = n / 10;
        Self {
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..n).collect(),
            seed,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
    }

    pub fn batch<T: Real>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let mut pixels = Vec::with_capacity(indices.len() * PIXELS);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.samples.get(i).ok_or(Error::Index {
                what: "dataset sample",
                index: i,
                limit: self.samples.len(),
            })?;
            pixels.extend(s.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)));
            labels.push(s.label as usize);
        }
        Ok(Batch {
            images: image_batch(pixels)?,
            labels,
        })
    }

    /// Type meta-labels for analysis; not part of any batch.
    pub fn type_tags(&self, indices: &[usize]) -> Vec<TypeTag> {
        indices.iter().map(|&i| self.samples[i].type_tag).collect()
    }
}

/// Shuffles digits and squares together and splits 80/10/10.
pub fn build_mixed_dataset(mnist: Vec<Sample>, squares: Vec<Sample>, seed: u64) -> Result<(Dataset, DatasetSplit)> {
    if mnist.len() != squares.len() || mnist.is_empty() {
        return Err(Error::Config(format!(
            "need equal, non-zero digit and squares counts, got {} and {}",
            mnist.len(),
            squares.len()
        )));
    }
    let mut samples = mnist;
    samples.extend(squares);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let split = DatasetSplit::by_ratio(samples.len(), seed);
    Ok((Dataset::new(samples), split))
}
