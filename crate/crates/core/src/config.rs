//! Experiment configuration as JSON.
//!
//! Every section has defaults, so `{}` is a valid baseline config. Unknown
//! keys are rejected and every error names the JSON path it refers to.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::SyntheticDatasetSpec;
use crate::harness::model::ModelSpec;
use crate::loss::LossSpec;

/// Environment variable that replaces the configured seed list.
pub const SEED_ENV: &str = "MANIFOLD_LOSS_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            lr: 1e-3,
            epochs: 30,
            batch: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetSpec,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub optimizer: OptimizerSpec,
    pub seeds: Vec<u64>,
    /// Preset chains run as grid cells; empty means one cell with `loss` as
    /// written.
    pub presets: Vec<String>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: SyntheticDatasetSpec::default(),
            model: ModelSpec::default(),
            loss: LossSpec::default(),
            optimizer: OptimizerSpec::default(),
            seeds: vec![0],
            presets: Vec::new(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate("dataset")?;
        self.model.validate("model")?;
        self.loss.validate("loss")?;
        let o = &self.optimizer;
        if !(o.lr >= 0.0) || !o.lr.is_finite() {
            return Err(Error::config("optimizer.lr", "must be a finite value >= 0"));
        }
        if o.epochs == 0 {
            return Err(Error::config("optimizer.epochs", "must be at least 1"));
        }
        if o.batch == 0 {
            return Err(Error::config("optimizer.batch", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Parses and validates a JSON config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::config(if path == "." { "<root>".to_string() } else { path }, inner.to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}
