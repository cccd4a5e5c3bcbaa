//! Run configuration (TOML with flat sections) and the bundled per-task
//! hyperparameter table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::Task;
use crate::model::ModelConfig;
use crate::msloss::LossConfig;
use crate::trainer::{OptimConfig, TrainConfig};

/// Overrides `data.root` when set.
pub const DATA_ROOT_ENV: &str = "EYEAUTH_DATA_ROOT";

const BUNDLED_HPARAMS: &str = include_str!("assets/hparams.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub log10_lr: f64,
    pub log10_wd: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl HyperParams {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig::new(self.log10_lr, self.log10_wd)
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta,
            lambda: self.lambda,
            epsilon: self.epsilon,
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.log10_lr, self.log10_wd, self.alpha, self.beta, self.lambda, self.epsilon]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self {
            log10_lr: v[0],
            log10_wd: v[1],
            alpha: v[2],
            beta: v[3],
            lambda: v[4],
            epsilon: v[5],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TableRow {
    task: Task,
    rate: f64,
    #[serde(flatten)]
    params: HyperParams,
}

#[derive(Debug, Clone, Deserialize)]
struct Table {
    fixed: HyperParams,
    model: Vec<TableRow>,
}

fn table() -> Table {
    toml::from_str(BUNDLED_HPARAMS).expect("bundled hyperparameter table parses")
}

/// The generic starting point shared by every task's search.
pub fn fixed_point() -> HyperParams {
    table().fixed
}

/// Shipped hyperparameters for `task` at `rate`, if the table has them.
pub fn bundled_hparams(task: Task, rate: f64) -> Option<HyperParams> {
    table()
        .model
        .into_iter()
        .find(|r| r.task == task && (r.rate - rate).abs() < 1e-9)
        .map(|r| r.params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub root: PathBuf,
    pub task: Task,
    pub rate: f64,
    pub n_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub width: usize,
    pub layers: usize,
    pub fc: Vec<usize>,
}

impl ModelSection {
    pub fn config(&self) -> ModelConfig {
        ModelConfig::uniform(self.width, self.layers, self.fc.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub n_values: Vec<usize>,
    pub rounds: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpoSection {
    pub budget: usize,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub model: ModelSection,
    pub hparams: HyperParams,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub hpo: HpoSection,
}

impl RunConfig {
    /// Full-scale defaults for `task` at `rate`.
    pub fn defaults(task: Task, rate: f64) -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataSection {
                root: PathBuf::from("data"),
                task,
                rate,
                n_folds: 4,
            },
            model: ModelSection {
                width: 128,
                layers: 9,
                fc: vec![256, 128],
            },
            hparams: bundled_hparams(task, rate).unwrap_or_else(fixed_point),
            train: TrainConfig::default(),
            eval: EvalSection {
                n_values: vec![1, 5, 10],
                rounds: (1..=9).collect(),
            },
            hpo: HpoSection {
                budget: 31,
                kappa: 2.576,
            },
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Ok(root) = std::env::var(DATA_ROOT_ENV) {
            cfg.data.root = PathBuf::from(root);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.config().validate()?;
        self.hparams.loss().validate()?;
        crate::signal::decimation_stages(self.data.rate).or_else(|e| {
            if (self.data.rate - crate::ingest::NATIVE_RATE_HZ).abs() < 1e-9 {
                Ok(Vec::new())
            } else {
                Err(e)
            }
        })?;
        if self.data.n_folds < 2 {
            return Err(Error::Config("n_folds must be at least 2".into()));
        }
        if self.eval.n_values.is_empty() || self.eval.n_values.contains(&0) {
            return Err(Error::Config("eval.n_values must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the emitted config, as hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
