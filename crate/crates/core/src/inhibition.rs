//! Inhibition gating of the router-input population.
//!
//! Every gate-bearing mode computes `z* = z ⊙ σ(a)` where the gate argument
//! `a` is built from up to three kinds of connection:
//!
//! * a linear layer `G` over the gated population itself (one-layer / GLU),
//! * pre-text projections `Pr_i` of activations recorded earlier in the same
//!   forward pass,
//! * post-text projections `Po_j` of activations recorded at later sites
//!   during the *previous* training step, max-pooled over that step's batch
//!   and broadcast over the current one.
//!
//! The post-text inputs come from an [`ActivationCache`] holding detached
//! copies, so no gradient ever reaches the step that produced them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Bindings, Linear, ParamStore};
use crate::tensor::{NodeId, Real, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InhibitionMode {
    None,
    /// Random inhibition (inverted dropout).
    Dropout,
    /// Single cross-layer sigmoid gate (GLU-style).
    OneLayer,
    Pretext,
    Posttext,
    Global,
}

impl InhibitionMode {
    pub const ALL: [InhibitionMode; 6] = [
        Self::None,
        Self::Dropout,
        Self::OneLayer,
        Self::Pretext,
        Self::Posttext,
        Self::Global,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Dropout => "dropout",
            Self::OneLayer => "glu",
            Self::Pretext => "pretext",
            Self::Posttext => "posttext",
            Self::Global => "global",
        }
    }

    /// Whether the mode produces a sigmoid gate.
    pub fn has_gate(self) -> bool {
        !matches!(self, Self::None | Self::Dropout)
    }

    pub fn uses_pretext(self) -> bool {
        matches!(self, Self::Pretext | Self::Global)
    }

    pub fn uses_posttext(self) -> bool {
        matches!(self, Self::Posttext | Self::Global)
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&m| m == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for InhibitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InhibitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown inhibition mode `{s}`; valid modes: {}", valid.join(", ")))
        })
    }
}

/// Detached activations from the previous training step, one slot per
/// post-text tap.
#[derive(Clone, Debug)]
pub struct ActivationCache<T: Real = f32> {
    entries: Vec<Option<Tensor<T>>>,
    iteration: u64,
}

impl<T: Real> ActivationCache<T> {
    pub fn new(taps: usize) -> Self {
        Self {
            entries: vec![None; taps],
            iteration: 0,
        }
    }

    pub fn taps(&self) -> usize {
        self.entries.len()
    }

    /// Number of completed training steps whose activations were cached.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(Option::is_none)
    }

    /// Replaces the entry for `tap` with a copy of `activation`. The copy is a
    /// plain value and carries no link to any tape.
    pub fn store(&mut self, tap: usize, activation: &Tensor<T>) {
        self.entries[tap] = Some(activation.clone());
    }

    pub fn get(&self, tap: usize) -> Option<&Tensor<T>> {
        self.entries.get(tap)?.as_ref()
    }

    /// Marks the end of a training step's stores.
    pub fn finish_step(&mut self) {
        if !self.is_empty() {
            self.iteration += 1;
        }
    }

    /// Restores a cache loaded from a checkpoint.
    pub fn restore(&mut self, iteration: u64, entries: Vec<Option<Tensor<T>>>) -> Result<()> {
        if entries.len() != self.entries.len() {
            return Err(Error::State(format!(
                "cache has {} taps, checkpoint has {}",
                self.entries.len(),
                entries.len()
            )));
        }
        if (iteration == 0) != entries.iter().all(Option::is_none) {
            return Err(Error::State("cache is empty exactly when the iteration is 0".into()));
        }
        self.entries = entries;
        self.iteration = iteration;
        Ok(())
    }
}

/// Gated output together with the gate values that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Gated {
    pub output: NodeId,
    pub gate: NodeId,
    /// Summed post-text term `[1, width]`, absent on a cold cache or when no
    /// post-text nets are configured.
    pub posttext: Option<NodeId>,
}

/// Inverted dropout: each unit is zeroed with probability `p` during training
/// and survivors are scaled by `1 / (1 - p)`.
pub fn dropout_inhibit<T: Real, R: Rng>(
    tape: &mut Tape<T>,
    z: NodeId,
    p: f64,
    training: Option<&mut R>,
) -> Result<NodeId> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    let Some(rng) = training else {
        return Ok(z);
    };
    if p == 0.0 {
        return Ok(z);
    }
    let keep = T::from_f64(1.0 / (1.0 - p));
    let shape = tape.shape(z).to_vec();
    let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < p { T::zero() } else { keep });
    let mask = tape.constant(mask);
    tape.mul(z, mask)
}

/// Builds `σ(G(x) + Σ Pr_i(x_i) + Σ maxpool_batch(Po_j(cached_j)))` and
/// multiplies it into `z`. Terms are added in that fixed order.
#[allow(clippy::too_many_arguments)]
fn gated<T: Real>(
    tape: &mut Tape<T>,
    bind: &Bindings,
    gate: &Linear,
    pretext: &[(Linear, NodeId)],
    posttext: &[Linear],
    cache: Option<&ActivationCache<T>>,
    z: NodeId,
    x: NodeId,
) -> Result<Gated> {
    let mut arg = gate.forward(tape, bind, x)?;
    for (net, tap) in pretext {
        if tape.shape(*tap).get(1) != Some(&net.in_dim) {
            return Err(Error::Shape {
                op: "pretext_inhibit",
                lhs: tape.shape(*tap).to_vec(),
                rhs: vec![net.out_dim, net.in_dim],
            });
        }
        let term = net.forward(tape, bind, *tap)?;
        arg = tape.add(arg, term)?;
    }
    let mut post_term = None;
    if let Some(cache) = cache.filter(|c| c.iteration() > 0) {
        for (j, net) in posttext.iter().enumerate() {
            let cached = cache
                .get(j)
                .ok_or_else(|| Error::State(format!("post-text tap {j} registered but never cached")))?;
            let leaf = tape.constant(cached.clone());
            let projected = net.forward(tape, bind, leaf)?;
            let pooled = tape.max_rows(projected)?;
            post_term = Some(match post_term {
                None => pooled,
                Some(acc) => tape.add(acc, pooled)?,
            });
        }
    }
    if let Some(term) = post_term {
        arg = tape.add_row(arg, term)?;
    }
    let gate = tape.sigmoid(arg)?;
    let output = tape.mul(z, gate)?;
    Ok(Gated {
        output,
        gate,
        posttext: post_term,
    })
}

/// `z* = z ⊙ σ(G(x))`.
pub fn one_layer_inhibit<T: Real>(
    tape: &mut Tape<T>,
    bind: &Bindings,
    gate: &Linear,
    z: NodeId,
    x: NodeId,
) -> Result<Gated> {
    gated(tape, bind, gate, &[], &[], None, z, x)
}

/// `z* = z ⊙ σ(G(x) + Σ Pr_i(x_i))`; each pre-text net is paired with its tap.
pub fn pretext_inhibit<T: Real>(
    tape: &mut Tape<T>,
    bind: &Bindings,
    gate: &Linear,
    pretext: &[(Linear, NodeId)],
    z: NodeId,
    x: NodeId,
) -> Result<Gated> {
    gated(tape, bind, gate, pretext, &[], None, z, x)
}

/// `z*(k) = z(k) ⊙ σ(G(x(k)) + Σ maxpool(Po_j(x_j(k-1))))`. With an empty
/// cache (k = 0) the post-text term is absent.
pub fn posttext_inhibit<T: Real>(
    tape: &mut Tape<T>,
    bind: &Bindings,
    gate: &Linear,
    posttext: &[Linear],
    cache: &ActivationCache<T>,
    z: NodeId,
    x: NodeId,
) -> Result<Gated> {
    gated(tape, bind, gate, &[], posttext, Some(cache), z, x)
}

/// One sigmoid over the one-layer, pre-text and post-text terms combined.
#[allow(clippy::too_many_arguments)]
pub fn global_inhibit<T: Real>(
    tape: &mut Tape<T>,
    bind: &Bindings,
    gate: &Linear,
    pretext: &[(Linear, NodeId)],
    posttext: &[Linear],
    cache: &ActivationCache<T>,
    z: NodeId,
    x: NodeId,
) -> Result<Gated> {
    gated(tape, bind, gate, pretext, posttext, Some(cache), z, x)
}

/// Result of applying an [`InhibitionUnit`].
#[derive(Clone, Copy, Debug)]
pub struct Inhibited {
    pub output: NodeId,
    /// Sigmoid gate values, absent for `none` and `dropout`.
    pub gate: Option<NodeId>,
    pub posttext: Option<NodeId>,
}

/// Configured inhibition mechanism with its parameters and cache.
#[derive(Clone, Debug)]
pub struct InhibitionUnit<T: Real = f32> {
    mode: InhibitionMode,
    dropout_p: f64,
    gate: Option<Linear>,
    pretext: Vec<Linear>,
    posttext: Vec<Linear>,
    cache: ActivationCache<T>,
}

impl<T: Real> InhibitionUnit<T> {
    /// `pre_dims` / `post_dims` are the widths of the pre-text and post-text
    /// tap sites; the unit creates only the sub-networks its mode uses.
    pub fn new<R: Rng>(
        params: &mut ParamStore<T>,
        mode: InhibitionMode,
        dropout_p: f64,
        width: usize,
        pre_dims: &[usize],
        post_dims: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout probability {dropout_p} outside [0, 1)")));
        }
        let gate = mode
            .has_gate()
            .then(|| Linear::new(params, "inhibit.gate", width, width, rng));
        let pretext = if mode.uses_pretext() {
            pre_dims
                .iter()
                .enumerate()
                .map(|(i, &d)| Linear::new(params, &format!("inhibit.pre{i}"), d, width, rng))
                .collect()
        } else {
            Vec::new()
        };
        let posttext: Vec<Linear> = if mode.uses_posttext() {
            post_dims
                .iter()
                .enumerate()
                .map(|(j, &d)| Linear::new(params, &format!("inhibit.post{j}"), d, width, rng))
                .collect()
        } else {
            Vec::new()
        };
        let cache = ActivationCache::new(posttext.len());
        Ok(Self {
            mode,
            dropout_p,
            gate,
            pretext,
            posttext,
            cache,
        })
    }

    pub fn mode(&self) -> InhibitionMode {
        self.mode
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn cache(&self) -> &ActivationCache<T> {
        &self.cache
    }

    pub fn cache_mut(&mut self) -> &mut ActivationCache<T> {
        &mut self.cache
    }

    pub fn post_taps(&self) -> usize {
        self.posttext.len()
    }

    pub fn gate_layer(&self) -> Option<&Linear> {
        self.gate.as_ref()
    }

    pub fn pretext_layers(&self) -> &[Linear] {
        &self.pretext
    }

    pub fn posttext_layers(&self) -> &[Linear] {
        &self.posttext
    }

    /// Gates `z` using `x` as the one-layer input and `pre_taps` as the
    /// pre-text sites. `training` carries the dropout RNG; `None` is eval.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        z: NodeId,
        x: NodeId,
        pre_taps: &[NodeId],
        training: Option<&mut R>,
    ) -> Result<Inhibited> {
        let gated = match self.mode {
            InhibitionMode::None => {
                return Ok(Inhibited {
                    output: z,
                    gate: None,
                    posttext: None,
                })
            }
            InhibitionMode::Dropout => {
                let output = dropout_inhibit(tape, z, self.dropout_p, training)?;
                return Ok(Inhibited {
                    output,
                    gate: None,
                    posttext: None,
                });
            }
            _ => {
                let gate = self.gate.as_ref().expect("gate-bearing mode has a gate layer");
                if self.pretext.len() > pre_taps.len() {
                    return Err(Error::Config(format!(
                        "{} pre-text nets but only {} taps",
                        self.pretext.len(),
                        pre_taps.len()
                    )));
                }
                let pre: Vec<(Linear, NodeId)> = self.pretext.iter().copied().zip(pre_taps.iter().copied()).collect();
                gated(tape, bind, gate, &pre, &self.posttext, Some(&self.cache), z, x)?
            }
        };
        Ok(Inhibited {
            output: gated.output,
            gate: Some(gated.gate),
            posttext: gated.posttext,
        })
    }
}
