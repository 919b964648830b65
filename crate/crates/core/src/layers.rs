//! Parameter storage and the layers of the convolutional backbone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{NodeId, Real, Tape, Tensor};

/// Side length of the square input images.
pub const IMAGE_SIDE: usize = 28;
/// Width of the feature population that the router consumes.
pub const FEATURE_DIM: usize = 128;
/// Hidden width of every two-layer MLP (experts, router, baseline head).
pub const HIDDEN_DIM: usize = 128;
pub const NUM_CLASSES: usize = 10;

pub const CONV1_CHANNELS: usize = 8;
pub const CONV2_CHANNELS: usize = 16;
pub const KERNEL: usize = 5;
/// Flattened pool1 output: 8 x 12 x 12.
pub const POOL1_DIM: usize = CONV1_CHANNELS * 12 * 12;
/// Flattened pool2 output: 16 x 4 x 4.
pub const POOL2_DIM: usize = CONV2_CHANNELS * 4 * 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered parameter tensors with their gradient buffers.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Tape handles for every parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<NodeId>);

impl Bindings {
    pub fn get(&self, id: ParamId) -> NodeId {
        self.0[id.0]
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.grads.push(None);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let value = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-limit..limit)));
        self.add(name, value)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn grad(&self, id: ParamId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    /// Copies every parameter onto the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Bindings {
        Bindings(
            self.values
                .iter()
                .map(|v| tape.leaf(v.clone(), requires_grad))
                .collect(),
        )
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    /// Adds the tape's leaf gradients into the store. Parameters that did not
    /// take part in the loss receive explicit zeros.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, bindings: &Bindings) {
        for (i, &node) in bindings.0.iter().enumerate() {
            let len = self.values[i].len();
            let buf = self.grads[i].get_or_insert_with(|| vec![T::zero(); len]);
            if let Some(g) = tape.grad_slice(node) {
                buf.iter_mut().zip(g).for_each(|(b, &v)| *b += v);
            }
        }
    }

    /// Replaces the value of a named parameter, checking its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if self.values[id.0].shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_param",
                lhs: self.values[id.0].shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub(crate) fn update_with(&mut self, mut f: impl FnMut(usize, &mut [T], &[T]) -> Result<()>) -> Result<()> {
        for i in 0..self.values.len() {
            let grad = self.grads[i]
                .as_deref()
                .ok_or_else(|| Error::Contract(format!("parameter `{}` has no gradient", self.names[i])))?;
            f(i, self.values[i].data_mut(), grad)?;
        }
        Ok(())
    }
}

/// Fully connected layer holding `w: [out, in]` and `b: [out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let weight = params.add_glorot(format!("{name}.weight"), &[out_dim, in_dim], in_dim, out_dim, rng);
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Bindings, x: NodeId) -> Result<NodeId> {
        tape.linear(x, bind.get(self.weight), bind.get(self.bias))
    }
}

/// Two-layer perceptron: linear, ReLU, linear.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc1: Linear::new(params, &format!("{name}.fc1"), in_dim, hidden, rng),
            fc2: Linear::new(params, &format!("{name}.fc2"), hidden, out_dim, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Bindings, x: NodeId) -> Result<NodeId> {
        let h = self.fc1.forward(tape, bind, x)?;
        let h = tape.relu(h)?;
        self.fc2.forward(tape, bind, h)
    }
}

/// Intermediate activations of the backbone, exposed as inhibition taps.
#[derive(Clone, Copy, Debug)]
pub struct BackboneOutput {
    /// Flattened first pooling output, `[B, 1152]`.
    pub pool1: NodeId,
    /// Flattened second pooling output, `[B, 256]`.
    pub pool2: NodeId,
    /// The 128-unit feature population, `[B, 128]`.
    pub features: NodeId,
}

/// `28x28 -> conv 5x5 (8) -> pool -> conv 5x5 (16) -> pool -> 256 -> 128`,
/// with ReLU after both convolutions and the projection.
#[derive(Clone, Copy, Debug)]
pub struct ConvBackbone {
    conv1_kernel: ParamId,
    conv1_bias: ParamId,
    conv2_kernel: ParamId,
    conv2_bias: ParamId,
    proj: Linear,
}

impl ConvBackbone {
    pub fn new<T: Real, R: Rng>(params: &mut ParamStore<T>, rng: &mut R) -> Self {
        let k2 = KERNEL * KERNEL;
        let conv1_kernel = params.add_glorot(
            "backbone.conv1.kernel",
            &[CONV1_CHANNELS, 1, KERNEL, KERNEL],
            k2,
            CONV1_CHANNELS * k2,
            rng,
        );
        let conv1_bias = params.add("backbone.conv1.bias", Tensor::zeros(&[CONV1_CHANNELS]));
        let conv2_kernel = params.add_glorot(
            "backbone.conv2.kernel",
            &[CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL],
            CONV1_CHANNELS * k2,
            CONV2_CHANNELS * k2,
            rng,
        );
        let conv2_bias = params.add("backbone.conv2.bias", Tensor::zeros(&[CONV2_CHANNELS]));
        let proj = Linear::new(params, "backbone.proj", POOL2_DIM, FEATURE_DIM, rng);
        Self {
            conv1_kernel,
            conv1_bias,
            conv2_kernel,
            conv2_bias,
            proj,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, bind: &Bindings, images: NodeId) -> Result<BackboneOutput> {
        let shape = tape.shape(images);
        if shape.len() != 4 || shape[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::Dimension {
                op: "backbone",
                msg: format!("expected [B, 1, 28, 28] images, got {shape:?}"),
            });
        }
        let h = tape.conv2d(images, bind.get(self.conv1_kernel), bind.get(self.conv1_bias))?;
        let h = tape.relu(h)?;
        let p1 = tape.maxpool2d(h)?;
        let h = tape.conv2d(p1, bind.get(self.conv2_kernel), bind.get(self.conv2_bias))?;
        let h = tape.relu(h)?;
        let p2 = tape.maxpool2d(h)?;
        let pool1 = tape.flatten(p1)?;
        let pool2 = tape.flatten(p2)?;
        let f = self.proj.forward(tape, bind, pool2)?;
        let features = tape.relu(f)?;
        Ok(BackboneOutput {
            pool1,
            pool2,
            features,
        })
    }
}
