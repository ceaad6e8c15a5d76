//! Experiment configuration: a TOML document resolved against defaults, with
//! a canonical printed form whose SHA-256 is embedded in every output.

use std::path::Path;

use nbtl::datasets::SyntheticSpec;
use nbtl::harness::TrainConfig;
use nbtl::metrics::DEFAULT_GAMMA;
use nbtl::study::StudyConfig;
use nbtl::Activation;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const SEED_ENV: &str = "NBTL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Base seed; `--seed` and `NBTL_SEED` override it.
    pub seed: u64,
    /// EMD similarity scale.
    pub gamma: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub pretrain_lr: f64,
    pub pretrain_beta: f64,
    /// Probe rates and the single-rate axis of every plan family.
    pub lr_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub runs: usize,
    pub tolerance: f64,
    pub jobs: usize,
    pub source: SyntheticSpec,
    pub target: SyntheticSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_study(0, StudyConfig::default())
    }
}

impl ExperimentConfig {
    pub fn from_study(seed: u64, s: StudyConfig) -> Self {
        Self {
            seed,
            gamma: DEFAULT_GAMMA,
            hidden: s.hidden,
            activation: s.activation,
            pretrain_lr: s.pretrain_lr,
            pretrain_beta: s.pretrain_beta,
            lr_grid: s.lr_grid,
            alpha_grid: s.alpha_grid,
            beta_grid: s.beta_grid,
            runs: s.runs,
            tolerance: s.tolerance,
            jobs: s.parallelism,
            source: s.source,
            target: s.target,
            pretrain: s.pretrain,
            finetune: s.finetune,
        }
    }

    pub fn study(&self) -> StudyConfig {
        StudyConfig {
            source: self.source.clone(),
            target: self.target.clone(),
            hidden: self.hidden.clone(),
            activation: self.activation,
            pretrain: self.pretrain.clone(),
            pretrain_lr: self.pretrain_lr,
            pretrain_beta: self.pretrain_beta,
            finetune: self.finetune.clone(),
            lr_grid: self.lr_grid.clone(),
            alpha_grid: self.alpha_grid.clone(),
            beta_grid: self.beta_grid.clone(),
            runs: self.runs,
            tolerance: self.tolerance,
            parallelism: self.jobs,
        }
    }

    /// Training config for fine-tuning and probes under the resolved seed.
    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.with_seed(self.seed)
    }

    pub fn parse(text: &str) -> Result<Self, Failure> {
        let config: Self = toml::from_str(text).map_err(|e| Failure::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (defaults when absent) and applies the seed override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self, Failure> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text).map_err(|f| f.context(&p.display().to_string()))?
            }
            None => Self::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        Ok(config)
    }

    fn validate(&self) -> Result<(), Failure> {
        let bad = |m: String| Err(Failure::Config(m));
        self.source.validate().map_err(|e| Failure::Config(format!("source: {e}")))?;
        self.target.validate().map_err(|e| Failure::Config(format!("target: {e}")))?;
        self.pretrain.validate().map_err(|e| Failure::Config(format!("pretrain: {e}")))?;
        self.finetune.validate().map_err(|e| Failure::Config(format!("finetune: {e}")))?;
        if self.hidden.is_empty() {
            return bad("hidden must name at least one block".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return bad(format!("pretrain_lr must be > 0, got {}", self.pretrain_lr));
        }
        for (name, grid) in [("lr_grid", &self.lr_grid), ("alpha_grid", &self.alpha_grid), ("beta_grid", &self.beta_grid)] {
            if grid.is_empty() || grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return bad(format!("{name} must be non-empty, finite and >= 0"));
            }
            if grid.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("{name} must be sorted ascending"));
            }
        }
        if self.lr_grid[0] <= 0.0 {
            return bad("lr_grid rates must be > 0".into());
        }
        if self.runs < 2 {
            return bad(format!("runs must be >= 2, got {}", self.runs));
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        Ok(())
    }

    /// The printed form used for digesting.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::parse(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn partial_document_takes_defaults() {
        let c = ExperimentConfig::parse("seed = 7\n[finetune]\nepochs = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.finetune.epochs, 3);
        assert_eq!(c.finetune.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.lr_grid, ExperimentConfig::default().lr_grid);
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let err = ExperimentConfig::parse("seed = 1\n\n[finetune]\nepoch = 3\n").unwrap_err();
        let Failure::Config(msg) = err else { panic!("not a config error") };
        assert!(msg.contains("line 4"), "{msg}");
        assert!(ExperimentConfig::parse("sed = 1\n").is_err());
    }

    #[test]
    fn seed_changes_digest() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { seed: 1, ..a.clone() };
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::parse("lr_grid = [0.1, 0.01]\n").is_err());
        assert!(ExperimentConfig::parse("runs = 1\n").is_err());
        assert!(ExperimentConfig::parse("[source]\nn_classes = 0\n").is_err());
    }
}
