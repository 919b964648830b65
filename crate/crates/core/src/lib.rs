//! Sparsely-gated Mixture-of-Experts routing with inhibition gating on the
//! router-input population, built on a small reverse-mode autodiff engine.
//!
//! * [`tensor`]: dense tensors and the gradient tape.
//! * [`layers`]: parameters, linear/MLP layers and the convolutional backbone.
//! * [`inhibition`]: dropout, one-layer, pre-text, post-text and global gates.
//! * [`moe`]: top-K routing and sparse expert dispatch.
//! * [`model`]: the assembled classifier.
//! * [`data`]: MNIST IDX input, synthetic squares, the `MIXN` file format.
//! * [`train`]: Adam, the training loop, evaluation and `MCKP` checkpoints.
//! * [`analysis`]: neuron/type correlation and inhibition threshold sweeps.

pub mod analysis;
pub mod data;
pub mod error;
pub mod inhibition;
pub mod layers;
pub mod model;
pub mod moe;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use inhibition::InhibitionMode;
pub use model::{Arch, Model, ModelConfig};
pub use tensor::{NodeId, Real, Tape, Tensor};
pub use train::{RunReport, TrainConfig};
