//! JSON experiment configs. Every key is optional; unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use safeuq_core::bench1d::Bench1dConfig;
use safeuq_core::estimators::EstimatorKind;
use safeuq_core::nn::{NetworkSpec, Optimizer, TrainConfig};
use safeuq_core::sim::{ControllerKind, SimConfig};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, path)
}

/// Parses `text`; `origin` only labels error messages.
pub fn parse_config_str<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|e| {
        let full = e.to_string();
        let message = match full.rsplit_once(" at line ") {
            Some((m, _)) => m.to_string(),
            None => full,
        };
        ConfigError::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_units: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden_layers: 4,
            hidden_units: 10,
        }
    }
}

impl NetworkConfig {
    pub fn spec(&self) -> NetworkSpec {
        NetworkSpec::mlp(1, 1, self.hidden_layers, self.hidden_units)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 1000,
            learning_rate: 1e-4,
            batch_size: 20,
            optimizer: Optimizer::default(),
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig::new(self.epochs, self.learning_rate, self.batch_size, seed).with_optimizer(self.optimizer)
    }
}

/// An estimator given either by name (default hyperparameters) or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EstimatorEntry", into = "EstimatorKind")]
pub struct Estimator(pub EstimatorKind);

#[derive(Deserialize)]
#[serde(untagged)]
enum EstimatorEntry {
    Name(String),
    Full(EstimatorKind),
}

impl TryFrom<EstimatorEntry> for Estimator {
    type Error = String;
    fn try_from(e: EstimatorEntry) -> Result<Self, String> {
        match e {
            EstimatorEntry::Name(n) => EstimatorKind::by_name(&n)
                .map(Estimator)
                .ok_or_else(|| format!("unknown estimator `{n}`")),
            EstimatorEntry::Full(k) => Ok(Estimator(k)),
        }
    }
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> Self {
        e.0
    }
}

fn all_estimators() -> Vec<Estimator> {
    EstimatorKind::defaults().into_iter().map(Estimator).collect()
}

fn named(names: &[&str]) -> Vec<Estimator> {
    names
        .iter()
        .map(|n| Estimator(EstimatorKind::by_name(n).expect("registered name")))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bench1dExperiment {
    pub data: Bench1dConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub estimators: Vec<Estimator>,
}

impl Default for Bench1dExperiment {
    fn default() -> Self {
        Bench1dExperiment {
            data: Bench1dConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            estimators: all_estimators(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShrinkageExperiment {
    pub data: Bench1dConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub factors: Vec<usize>,
    pub estimators: Vec<Estimator>,
}

impl Default for ShrinkageExperiment {
    fn default() -> Self {
        ShrinkageExperiment {
            data: Bench1dConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            factors: vec![1, 2, 4, 8],
            estimators: named(&["Ensemble", "DEUP", "DADEE"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensitivityExperiment {
    pub data: Bench1dConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub rate: f64,
    pub n_samples: usize,
    pub dx: f64,
    /// Seeds to repeat over; empty means the root seed only.
    pub seeds: Vec<u64>,
}

impl Default for SensitivityExperiment {
    fn default() -> Self {
        SensitivityExperiment {
            data: Bench1dConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            rate: 0.2,
            n_samples: 5,
            dx: safeuq_core::metrics::SENSITIVITY_DX,
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateExperiment {
    pub sim: SimConfig,
    pub estimator: ControllerKind,
    pub p_k: f64,
    pub runs: usize,
}

impl Default for SimulateExperiment {
    fn default() -> Self {
        SimulateExperiment {
            sim: SimConfig::default(),
            estimator: ControllerKind::Dadee,
            p_k: 0.9,
            runs: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepExperiment {
    pub sim: SimConfig,
    pub estimators: Vec<ControllerKind>,
    pub p_values: Vec<f64>,
    pub runs: usize,
}

impl Default for SweepExperiment {
    fn default() -> Self {
        SweepExperiment {
            sim: SimConfig::default(),
            estimators: ControllerKind::LEARNED.to_vec(),
            p_values: vec![0.5, 0.6, 0.7, 0.8, 0.9],
            runs: 20,
        }
    }
}
