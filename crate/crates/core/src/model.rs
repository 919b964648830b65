//! The full classifier: backbone, inhibition on the 128-unit feature
//! population, then either a single MLP head or the MoE layer.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::inhibition::{InhibitionMode, InhibitionUnit};
use crate::layers::{
    Bindings, ConvBackbone, Mlp, ParamStore, FEATURE_DIM, HIDDEN_DIM, IMAGE_SIDE, NUM_CLASSES, POOL1_DIM, POOL2_DIM,
};
use crate::moe::{MoeLayer, Routing};
use crate::tensor::{softmax_rows, NodeId, Real, Tape, Tensor};

/// Widths of the post-text tap sites: the class logits (the combined expert
/// output that feeds the loss) and the loss layer's class probabilities.
pub const POST_TAP_DIMS: [usize; 2] = [NUM_CLASSES, NUM_CLASSES];
/// Widths of the pre-text tap sites: flattened pool1 and pool2 outputs.
pub const PRE_TAP_DIMS: [usize; 2] = [POOL1_DIM, POOL2_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Arch {
    /// Backbone plus one two-layer MLP head.
    Baseline,
    Moe,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::Moe => "moe",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "moe" => Ok(Self::Moe),
            _ => Err(Error::Config(format!("unknown architecture `{s}`; valid: baseline, moe"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub experts: usize,
    pub top_k: usize,
    pub inhibition: InhibitionMode,
    pub dropout_p: f64,
    pub router_noise: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Moe,
            experts: 5,
            top_k: 3,
            inhibition: InhibitionMode::None,
            dropout_p: 0.5,
            router_noise: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
enum Head {
    Single(Mlp),
    Moe(MoeLayer),
}

/// Node handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: NodeId,
    /// Raw (pre-gate) router-input features.
    pub features: NodeId,
    pub pool1: NodeId,
    pub pool2: NodeId,
    pub gate: Option<NodeId>,
    /// Post-text gate term `[1, 128]` used by this pass.
    pub posttext: Option<NodeId>,
    pub routing: Option<Routing>,
}

/// Plain values from an evaluation forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T: Real> {
    pub logits: Tensor<T>,
    pub features: Tensor<T>,
    pub gate: Option<Tensor<T>>,
    /// Flattened `[B, K]` expert choices, empty for the baseline head.
    pub experts: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    backbone: ConvBackbone,
    inhibition: InhibitionUnit<T>,
    head: Head,
}

impl<T: Real> Model<T> {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let backbone = ConvBackbone::new(&mut params, rng);
        let inhibition = InhibitionUnit::new(
            &mut params,
            config.inhibition,
            config.dropout_p,
            FEATURE_DIM,
            &PRE_TAP_DIMS,
            &POST_TAP_DIMS,
            rng,
        )?;
        let head = match config.arch {
            Arch::Baseline => Head::Single(Mlp::new(&mut params, "head", FEATURE_DIM, HIDDEN_DIM, NUM_CLASSES, rng)),
            Arch::Moe => Head::Moe(
                MoeLayer::new(
                    &mut params,
                    config.experts,
                    config.top_k,
                    (FEATURE_DIM, HIDDEN_DIM, NUM_CLASSES),
                    rng,
                )?
                .with_router_noise(config.router_noise),
            ),
        };
        Ok(Self {
            config,
            params,
            backbone,
            inhibition,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn inhibition(&self) -> &InhibitionUnit<T> {
        &self.inhibition
    }

    pub fn inhibition_mut(&mut self) -> &mut InhibitionUnit<T> {
        &mut self.inhibition
    }

    pub fn moe(&self) -> Option<&MoeLayer> {
        match &self.head {
            Head::Moe(m) => Some(m),
            Head::Single(_) => None,
        }
    }

    /// Records the whole network on `tape`. Passing a training RNG enables
    /// dropout and router noise and refreshes the post-text cache with this
    /// step's activations (after they have been used as the previous step's).
    pub fn forward<R: Rng>(
        &mut self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        images: NodeId,
        mut training: Option<&mut R>,
    ) -> Result<ForwardOutput> {
        let bb = self.backbone.forward(tape, bind, images)?;
        let inhibited = self.inhibition.forward(
            tape,
            bind,
            bb.features,
            bb.features,
            &[bb.pool1, bb.pool2],
            training.as_deref_mut(),
        )?;
        let (logits, routing) = match &self.head {
            Head::Single(mlp) => (mlp.forward(tape, bind, inhibited.output)?, None),
            Head::Moe(moe) => {
                let out = moe.forward(tape, bind, inhibited.output, training.as_deref_mut())?;
                (out.output, Some(out.routing))
            }
        };
        if training.is_some() && self.inhibition.post_taps() > 0 {
            let value = tape.value(logits).clone();
            let probs = Tensor::new(value.shape(), softmax_rows(value.data(), value.cols()))?;
            let cache = self.inhibition.cache_mut();
            cache.store(0, &value);
            cache.store(1, &probs);
            cache.finish_step();
        }
        Ok(ForwardOutput {
            logits,
            features: bb.features,
            pool1: bb.pool1,
            pool2: bb.pool2,
            gate: inhibited.gate,
            posttext: inhibited.posttext,
            routing,
        })
    }

    /// Evaluation-mode forward pass on a fresh tape without gradients.
    pub fn predict(&mut self, images: &Tensor<T>) -> Result<Prediction<T>> {
        let mut tape = Tape::new();
        let bind = self.params.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let out = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &bind, x, None)?;
        Ok(Prediction {
            logits: tape.value(out.logits).clone(),
            features: tape.value(out.features).clone(),
            gate: out.gate.map(|g| tape.value(g).clone()),
            experts: out.routing.map(|r| r.indices).unwrap_or_default(),
        })
    }

    /// Sigmoid gate values `[B, 128]` in evaluation mode.
    pub fn record_inhibition_activations(&mut self, images: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.config.inhibition.has_gate() {
            return Err(Error::Contract(format!(
                "inhibition mode `{}` has no gate to record",
                self.config.inhibition
            )));
        }
        let pred = self.predict(images)?;
        Ok(pred.gate.expect("gate-bearing mode yields gate values"))
    }
}

/// Shapes a flat list of 28x28 images into `[B, 1, 28, 28]`.
pub fn image_batch<T: Real>(pixels: Vec<T>) -> Result<Tensor<T>> {
    let per = IMAGE_SIDE * IMAGE_SIDE;
    if pixels.is_empty() || !pixels.len().is_multiple_of(per) {
        return Err(Error::Dimension {
            op: "image_batch",
            msg: format!("{} values is not a whole number of 28x28 images", pixels.len()),
        });
    }
    Tensor::new(&[pixels.len() / per, 1, IMAGE_SIDE, IMAGE_SIDE], pixels)
}
