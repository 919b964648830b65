//! Sparsely-gated Mixture-of-Experts with top-K softmax routing.
//!
//! No load-balancing loss is applied. Only the experts a sample selects run
//! forward (and therefore backward) for that sample.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::layers::{Bindings, Mlp, ParamStore};
use crate::tensor::{NodeId, Real, Tape, Tensor};

/// Indices of the `k` largest values, largest first; ties go to the lower
/// index.
pub fn select_top_k<T: Real>(row: &[T], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(k);
    order
}

/// Per-sample expert choice and mixing weights.
#[derive(Clone, Debug)]
pub struct Routing {
    pub batch: usize,
    pub top_k: usize,
    /// Row-major `[batch, top_k]` expert indices, best first.
    pub indices: Vec<usize>,
    /// `[batch, top_k]` softmax over the selected logits.
    pub weights: NodeId,
}

impl Routing {
    pub fn experts_of(&self, sample: usize) -> &[usize] {
        &self.indices[sample * self.top_k..(sample + 1) * self.top_k]
    }
}

/// Picks the top-`k` router logits per row and softmaxes over just those.
pub fn topk_gate<T: Real>(tape: &mut Tape<T>, logits: NodeId, k: usize) -> Result<Routing> {
    let shape = tape.shape(logits).to_vec();
    let [batch, n] = shape[..] else {
        return Err(Error::Dimension {
            op: "topk_gate",
            msg: format!("expected [B, N] logits, got {shape:?}"),
        });
    };
    if k == 0 || k > n {
        return Err(Error::Config(format!("top-k {k} must lie in 1..={n}")));
    }
    let values = tape.value(logits);
    let mut indices = Vec::with_capacity(batch * k);
    for b in 0..batch {
        indices.extend(select_top_k(values.row(b), k));
    }
    let flat: Vec<usize> = indices
        .iter()
        .enumerate()
        .map(|(i, &e)| (i / k) * n + e)
        .collect();
    let picked = tape.select(logits, &flat, &[batch, k])?;
    let weights = tape.softmax(picked)?;
    Ok(Routing {
        batch,
        top_k: k,
        indices,
        weights,
    })
}

#[derive(Clone, Debug)]
pub struct MoeOutput {
    pub output: NodeId,
    pub router_logits: NodeId,
    pub routing: Routing,
}

/// Router MLP plus `N` expert MLPs.
#[derive(Clone, Debug)]
pub struct MoeLayer {
    router: Mlp,
    experts: Vec<Mlp>,
    top_k: usize,
    noise_std: f64,
}

impl MoeLayer {
    pub fn new<T: Real, R: Rng>(
        params: &mut ParamStore<T>,
        experts: usize,
        top_k: usize,
        dims: (usize, usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        if experts == 0 || top_k == 0 || top_k > experts {
            return Err(Error::Config(format!(
                "need 1 <= K <= N, got K = {top_k}, N = {experts}"
            )));
        }
        let (in_dim, hidden, out_dim) = dims;
        let router = Mlp::new(params, "moe.router", in_dim, hidden, experts, rng);
        let experts = (0..experts)
            .map(|j| Mlp::new(params, &format!("moe.expert{j}"), in_dim, hidden, out_dim, rng))
            .collect();
        Ok(Self {
            router,
            experts,
            top_k,
            noise_std: 0.0,
        })
    }

    /// Standard deviation of Gaussian noise added to router logits while
    /// training. Zero (the default) disables it.
    pub fn with_router_noise(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn experts(&self) -> &[Mlp] {
        &self.experts
    }

    pub fn router(&self) -> &Mlp {
        &self.router
    }

    /// Routes each row of `features` to its top-K experts and mixes their
    /// outputs with the gate weights.
    pub fn forward<T: Real, R: Rng>(
        &self,
        tape: &mut Tape<T>,
        bind: &Bindings,
        features: NodeId,
        training: Option<&mut R>,
    ) -> Result<MoeOutput> {
        let batch = tape.value(features).rows();
        let mut router_logits = self.router.forward(tape, bind, features)?;
        if let (Some(rng), true) = (training, self.noise_std > 0.0) {
            let normal = Normal::new(0.0, self.noise_std).map_err(|e| Error::Config(e.to_string()))?;
            let shape = tape.shape(router_logits).to_vec();
            let noise = Tensor::from_fn(&shape, |_| T::from_f64(normal.sample(rng)));
            let noise = tape.constant(noise);
            router_logits = tape.add(router_logits, noise)?;
        }
        let routing = topk_gate(tape, router_logits, self.top_k)?;
        let mut parts = Vec::new();
        for (j, expert) in self.experts.iter().enumerate() {
            let (rows, slots): (Vec<usize>, Vec<usize>) = routing
                .indices
                .iter()
                .enumerate()
                .filter(|&(_, &e)| e == j)
                .map(|(slot, _)| (slot / self.top_k, slot))
                .unzip();
            if rows.is_empty() {
                continue;
            }
            let x = tape.gather_rows(features, &rows)?;
            let y = expert.forward(tape, bind, x)?;
            let w = tape.select(routing.weights, &slots, &[rows.len()])?;
            let scaled = tape.scale_rows(y, w)?;
            parts.push((scaled, rows));
        }
        let output = tape.scatter_rows(batch, parts)?;
        Ok(MoeOutput {
            output,
            router_logits,
            routing,
        })
    }
}

/// Counts how often each expert was selected.
pub fn utilization_histogram<'a>(routings: impl IntoIterator<Item = &'a Routing>, experts: usize) -> Vec<usize> {
    let mut counts = vec![0usize; experts];
    for r in routings {
        for &e in &r.indices {
            counts[e] += 1;
        }
    }
    counts
}
