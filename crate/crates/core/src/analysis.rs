//! Correlation of router-input neurons with the hidden data type, and how
//! strongly the inhibition gate suppresses each kind of neuron.

use std::fmt::Write as _;

use log::warn;

use crate::data::{Batch, Dataset, TypeTag};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

/// Pearson correlation coefficient. A constant series yields 0.
pub fn pearson(values: &[f64], labels: &[f64]) -> Result<f64> {
    if values.len() != labels.len() || values.len() < 2 {
        return Err(Error::Config(format!(
            "pearson needs two equal series of length >= 2, got {} and {}",
            values.len(),
            labels.len()
        )));
    }
    let n = values.len() as f64;
    let mf = values.iter().sum::<f64>() / n;
    let mt = labels.iter().sum::<f64>() / n;
    let (mut cov, mut vf, mut vt) = (0.0, 0.0, 0.0);
    for (&f, &t) in values.iter().zip(labels) {
        cov += (f - mf) * (t - mt);
        vf += (f - mf) * (f - mf);
        vt += (t - mt) * (t - mt);
    }
    if vf == 0.0 || vt == 0.0 {
        warn!("pearson: zero-variance series, correlation defined as 0");
        return Ok(0.0);
    }
    Ok((cov / (vf.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks with ties sharing their average rank (1-based).
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    pearson(&ranks(a), &ranks(b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeuronClass {
    /// Weakly correlated with the data type: shared by both types.
    Common,
    /// Correlated with the data type more strongly than average.
    Discriminative,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeuronStats {
    pub neuron: usize,
    pub mean_gate_activation: f64,
    pub abs_pearson: f64,
    pub class: NeuronClass,
}

/// Per-neuron stats from raw features `[S, n]`, gate values `[S, n]` and the
/// matching type tags. Neurons whose `|c|` exceeds the population mean are
/// discriminative.
pub fn neuron_stats(features: &Tensor<f32>, gates: &Tensor<f32>, types: &[TypeTag]) -> Result<Vec<NeuronStats>> {
    if features.shape() != gates.shape() || features.rows() != types.len() {
        return Err(Error::Shape {
            op: "neuron_stats",
            lhs: features.shape().to_vec(),
            rhs: gates.shape().to_vec(),
        });
    }
    let (samples, width) = (features.rows(), features.cols());
    let t: Vec<f64> = types.iter().map(|t| t.code() as f64).collect();
    let mut column = vec![0.0; samples];
    let mut stats = Vec::with_capacity(width);
    for neuron in 0..width {
        for (s, slot) in column.iter_mut().enumerate() {
            *slot = features.data()[s * width + neuron] as f64;
        }
        let c = pearson(&column, &t)?.abs();
        let mean_gate = (0..samples).map(|s| gates.data()[s * width + neuron] as f64).sum::<f64>() / samples as f64;
        stats.push(NeuronStats {
            neuron,
            mean_gate_activation: mean_gate,
            abs_pearson: c,
            class: NeuronClass::Common,
        });
    }
    let boundary = stats.iter().map(|s| s.abs_pearson).sum::<f64>() / width as f64;
    for s in &mut stats {
        if s.abs_pearson > boundary {
            s.class = NeuronClass::Discriminative;
        }
    }
    Ok(stats)
}

/// Runs the model in eval mode over `indices` and summarizes each neuron of
/// the router input.
pub fn neuron_report(
    model: &mut Model<f32>,
    dataset: &Dataset,
    indices: &[usize],
    eval_batch: usize,
) -> Result<Vec<NeuronStats>> {
    if !model.config().inhibition.has_gate() {
        return Err(Error::Contract(format!(
            "inhibition mode `{}` has no gate to analyze",
            model.config().inhibition
        )));
    }
    let mut features = Vec::new();
    let mut gates = Vec::new();
    let mut width = 0;
    for chunk in indices.chunks(eval_batch.max(1)) {
        let batch: Batch<f32> = dataset.batch(chunk)?;
        let pred = model.predict(&batch.images)?;
        width = pred.features.cols();
        features.extend_from_slice(pred.features.data());
        gates.extend_from_slice(pred.gate.expect("gate-bearing mode").data());
    }
    let shape = [indices.len(), width];
    neuron_stats(
        &Tensor::new(&shape, features)?,
        &Tensor::new(&shape, gates)?,
        &dataset.type_tags(indices),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub common: usize,
    pub discriminative: usize,
}

/// `count` evenly spaced thresholds strictly inside (0, 1).
pub fn default_thresholds(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / (count + 1) as f64).collect()
}

/// For each threshold, how many neurons of each class have a mean gate
/// activation below it (i.e. count as suppressed).
pub fn threshold_sweep(stats: &[NeuronStats], thresholds: &[f64]) -> Vec<SweepPoint> {
    thresholds
        .iter()
        .map(|&threshold| {
            let below = |class| {
                stats
                    .iter()
                    .filter(|s| s.class == class && s.mean_gate_activation < threshold)
                    .count()
            };
            SweepPoint {
                threshold,
                common: below(NeuronClass::Common),
                discriminative: below(NeuronClass::Discriminative),
            }
        })
        .collect()
}

/// `neuron,abs_pearson,mean_activation`
pub fn figure2_csv(stats: &[NeuronStats]) -> String {
    let mut out = String::from("neuron,abs_pearson,mean_activation\n");
    for s in stats {
        let _ = writeln!(out, "{},{},{}", s.neuron, s.abs_pearson, s.mean_gate_activation);
    }
    out
}

/// `threshold,n_common,n_discriminative`
pub fn figure3_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,n_common,n_discriminative\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.threshold, p.common, p.discriminative);
    }
    out
}
