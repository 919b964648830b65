//! Adam training loop, evaluation, run reports and checkpoints.

mod adam;
mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::moe::select_top_k;
use crate::tensor::{Tape, Tensor};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, MCKP_MAGIC, MCKP_VERSION};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_batch: usize,
    /// Number of seeds; run `i` uses `seed + i`.
    pub runs: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 128,
            epochs: 35,
            eval_batch: 5120,
            runs: 5,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("eval_batch", self.eval_batch),
            ("runs", self.runs),
            ("experts", self.model.experts),
            ("top_k", self.model.top_k),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if self.model.top_k > self.model.experts {
            return Err(Error::Config(format!(
                "top_k {} exceeds experts {}",
                self.model.top_k, self.model.experts
            )));
        }
        if !(0.0..1.0).contains(&self.model.dropout_p) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.model.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_nll: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val: EvalResult,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub seed: u64,
    /// Loss of every optimization step, in order.
    pub step_losses: Vec<f32>,
    pub epochs: Vec<EpochRecord>,
    pub test: EvalResult,
    pub model: Model<f32>,
}

/// Anything that maps an image batch to class logits.
pub trait Classifier {
    fn logits(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Classifier for Model<f32> {
    fn logits(&mut self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.predict(images)?.logits)
    }
}

/// Accuracy (first argmax) and mean cross-entropy over `indices`.
pub fn evaluate<C: Classifier>(
    model: &mut C,
    dataset: &Dataset,
    indices: &[usize],
    eval_batch: usize,
) -> Result<EvalResult> {
    if indices.is_empty() {
        return Err(Error::Config("cannot evaluate an empty split".into()));
    }
    let mut correct = 0usize;
    let mut nll = 0.0f64;
    for chunk in indices.chunks(eval_batch.max(1)) {
        let batch: Batch<f32> = dataset.batch(chunk)?;
        let logits = model.logits(&batch.images)?;
        let classes = logits.cols();
        for (r, &label) in batch.labels.iter().enumerate() {
            let row = logits.row(r);
            if select_top_k(row, 1)[0] == label {
                correct += 1;
            }
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
            let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
            nll += lse - row[label] as f64;
        }
        debug_assert_eq!(classes, logits.cols());
    }
    Ok(EvalResult {
        accuracy: correct as f64 / indices.len() as f64,
        mean_nll: nll / indices.len() as f64,
    })
}

/// Per-expert selection counts over `indices` (evaluation mode).
pub fn expert_utilization(
    model: &mut Model<f32>,
    dataset: &Dataset,
    indices: &[usize],
    eval_batch: usize,
) -> Result<Vec<usize>> {
    let experts = model
        .moe()
        .ok_or_else(|| Error::Contract("model has no MoE layer".into()))?
        .num_experts();
    let mut counts = vec![0usize; experts];
    for chunk in indices.chunks(eval_batch.max(1)) {
        let batch: Batch<f32> = dataset.batch(chunk)?;
        for e in model.predict(&batch.images)?.experts {
            counts[e] += 1;
        }
    }
    Ok(counts)
}

fn batch_hash(indices: &[usize]) -> u64 {
    // FNV-1a over the sample indices.
    indices.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &i| {
        (h ^ i as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// One forward/backward/update. Returns the batch loss and correct count.
pub fn train_step(
    model: &mut Model<f32>,
    adam: &mut AdamState<f32>,
    batch: &Batch<f32>,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f32, usize)> {
    let mut tape = Tape::new();
    let bind = model.params().bind(&mut tape, true);
    let images = tape.constant(batch.images.clone());
    let out = model.forward(&mut tape, &bind, images, Some(rng))?;
    let correct = {
        let logits = tape.value(out.logits);
        batch
            .labels
            .iter()
            .enumerate()
            .filter(|&(r, &l)| select_top_k(logits.row(r), 1)[0] == l)
            .count()
    };
    let loss = tape.cross_entropy(out.logits, &batch.labels)?;
    let loss_value = tape.value(loss).item();
    tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grads();
    params.accumulate_grads(&tape, &bind);
    adam_step(params, adam, lr)?;
    Ok((loss_value, correct))
}

/// Trains one model from `seed` and evaluates it on the validation split
/// each epoch and on the test split at the end.
pub fn train(config: &TrainConfig, dataset: &Dataset, split: &DatasetSplit, seed: u64) -> Result<RunReport> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::<f32>::new(config.model.clone(), &mut init_rng)?;
    let mut adam = AdamState::new(model.params());
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(1);
    let mut step_rng = ChaCha8Rng::seed_from_u64(seed);
    step_rng.set_stream(2);

    let mut step_losses = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut iteration = 0u64;
    for epoch in 1..=config.epochs {
        let mut order = split.train.clone();
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.batch(chunk)?;
            let (loss, hits) = train_step(&mut model, &mut adam, &batch, config.learning_rate, &mut step_rng)
                .map_err(|e| Error::Diverged {
                    iteration,
                    batch_hash: batch_hash(chunk),
                    source: Box::new(e),
                })?;
            iteration += 1;
            step_losses.push(loss);
            loss_sum += loss as f64 * chunk.len() as f64;
            correct += hits;
        }
        let val = if split.val.is_empty() {
            EvalResult {
                accuracy: f64::NAN,
                mean_nll: f64::NAN,
            }
        } else {
            evaluate(&mut model, dataset, &split.val, config.eval_batch)?
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: correct as f64 / order.len() as f64,
            val,
        };
        info!(
            "seed {seed} epoch {epoch}: train loss {:.4} acc {:.4}, val acc {:.4}",
            record.train_loss, record.train_accuracy, record.val.accuracy
        );
        epochs.push(record);
    }
    let test = evaluate(&mut model, dataset, &split.test, config.eval_batch)?;
    Ok(RunReport {
        seed,
        step_losses,
        epochs,
        test,
        model,
    })
}

/// Runs `config.runs` seeds starting at `config.seed`.
pub fn train_runs(config: &TrainConfig, dataset: &Dataset, split: &DatasetSplit) -> Result<Vec<RunReport>> {
    (0..config.runs as u64)
        .map(|i| train(config, dataset, split, config.seed + i))
        .collect()
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// CSV with columns `epoch,split,loss,accuracy,seed`.
pub fn report_csv(reports: &[RunReport]) -> String {
    let mut out = String::from("epoch,split,loss,accuracy,seed\n");
    for r in reports {
        for e in &r.epochs {
            let _ = writeln!(out, "{},train,{},{},{}", e.epoch, e.train_loss, e.train_accuracy, r.seed);
            let _ = writeln!(out, "{},val,{},{},{}", e.epoch, e.val.mean_nll, e.val.accuracy, r.seed);
        }
        let last = r.epochs.last().map_or(0, |e| e.epoch);
        let _ = writeln!(out, "{last},test,{},{},{}", r.test.mean_nll, r.test.accuracy, r.seed);
    }
    out
}

pub fn write_report_csv(path: &Path, reports: &[RunReport]) -> Result<()> {
    fs::write(path, report_csv(reports))?;
    Ok(())
}
