//! Run configuration file (TOML). Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use inhibit_core::model::{Arch, ModelConfig};
use inhibit_core::train::TrainConfig;
use inhibit_core::InhibitionMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Overrides `output.root` when set.
pub const OUT_DIR_ENV: &str = "INHIBIT_OUT_DIR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `MIXN` file written by `gen-data`.
    pub dataset: PathBuf,
    /// Seed recorded with the 80/10/10 split.
    pub split_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/mixed.mixn"),
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `moe` or `baseline`.
    pub arch: String,
    pub experts: usize,
    pub top_k: usize,
    /// One of none, dropout, glu, pretext, posttext, global.
    pub inhibition: String,
    pub dropout_p: f64,
    pub router_noise: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            arch: m.arch.name().into(),
            experts: m.experts,
            top_k: m.top_k,
            inhibition: m.inhibition.name().into(),
            dropout_p: m.dropout_p,
            router_noise: m.router_noise,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_batch: usize,
    pub runs: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            eval_batch: t.eval_batch,
            runs: t.runs,
            seed: t.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub root: PathBuf,
    pub name: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            root: PathBuf::from("runs"),
            name: "run".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn mode(&self) -> Result<InhibitionMode, CliError> {
        self.model.inhibition.parse().map_err(CliError::from)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let arch: Arch = self.model.arch.parse().map_err(CliError::from)?;
        let cfg = TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            eval_batch: self.train.eval_batch,
            runs: self.train.runs,
            seed: self.train.seed,
            model: ModelConfig {
                arch,
                experts: self.model.experts,
                top_k: self.model.top_k,
                inhibition: self.mode()?,
                dropout_p: self.model.dropout_p,
                router_noise: self.model.router_noise,
            },
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    /// The environment variable wins over the file.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_ENV).map_or_else(|| self.output.root.clone(), PathBuf::from)
    }
}
