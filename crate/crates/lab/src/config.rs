//! JSON experiment configuration.
//!
//! The file is a flat object; every key is optional and unknown keys are
//! rejected. `num_classes` and `mismatch_ratio` together fix the known/unknown
//! split, so the two cannot disagree.

use std::fs;
use std::path::{Path, PathBuf};

use samosa_core::alcore::{ExperimentConfig, ModelConfig, TrainSettings};
use samosa_core::strategies::StrategyKind;
use samosa_core::synthdata::{GenConfig, OracleConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write config {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn from_core(e: samosa_core::Error) -> ConfigError {
    match e {
        samosa_core::Error::InvalidParam { key, reason } => ConfigError::Invalid { key: key.into(), reason },
        samosa_core::Error::UnknownStrategy(name) => {
            ConfigError::Invalid { key: "strategy".into(), reason: format!("unknown strategy `{name}`") }
        }
        other => ConfigError::Invalid { key: "config".into(), reason: other.to_string() },
    }
}

/// On-disk form of [`ExperimentConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub rounds: usize,
    pub budget: usize,
    pub strategy: String,
    pub seed: u64,
    pub num_classes: usize,
    pub mismatch_ratio: f64,
    pub per_class: usize,
    pub atypical_fraction: f64,
    pub patches: usize,
    pub dim: usize,
    pub sigma_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub signal_norm: f64,
    pub init_labeled_frac: f64,
    pub test_frac: f64,
    pub flip_prob: f64,
    pub width: usize,
    pub init_std: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub rho: f64,
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig::from(&ExperimentConfig::default())
    }
}

impl From<&ExperimentConfig> for FileConfig {
    fn from(c: &ExperimentConfig) -> Self {
        FileConfig {
            rounds: c.rounds,
            budget: c.budget,
            strategy: c.strategy.to_string(),
            seed: c.seed,
            num_classes: c.data.num_classes(),
            mismatch_ratio: c.mismatch_ratio,
            per_class: c.data.per_class,
            atypical_fraction: c.data.atypical_fraction,
            patches: c.data.patches,
            dim: c.data.dim,
            sigma_p: c.data.sigma_p,
            alpha: c.data.alpha,
            beta: c.data.beta,
            signal_norm: c.data.signal_norm,
            init_labeled_frac: c.init_labeled_frac,
            test_frac: c.test_frac,
            flip_prob: c.oracle.flip_prob,
            width: c.model.width,
            init_std: c.model.init_std,
            epochs: c.train.epochs,
            batch_size: c.train.batch_size,
            lr: c.train.lr,
            momentum: c.train.momentum,
            weight_decay: c.train.weight_decay,
            lr_step: c.train.step_size,
            lr_gamma: c.train.gamma,
            rho: c.train.rho,
        }
    }
}

impl FileConfig {
    /// Resolves and validates.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let strategy: StrategyKind = self.strategy.parse().map_err(from_core)?;
        if self.num_classes < 2 {
            return Err(ConfigError::Invalid {
                key: "num_classes".into(),
                reason: "at least two classes are required".into(),
            });
        }
        let data = GenConfig {
            num_known: self.num_classes,
            num_unknown: 0,
            per_class: self.per_class,
            atypical_fraction: self.atypical_fraction,
            patches: self.patches,
            dim: self.dim,
            sigma_p: self.sigma_p,
            alpha: self.alpha,
            beta: self.beta,
            signal_norm: self.signal_norm,
        }
        .with_mismatch(self.mismatch_ratio)
        .map_err(from_core)?;
        let cfg = ExperimentConfig {
            rounds: self.rounds,
            budget: self.budget,
            data,
            mismatch_ratio: self.mismatch_ratio,
            init_labeled_frac: self.init_labeled_frac,
            test_frac: self.test_frac,
            oracle: OracleConfig { flip_prob: self.flip_prob },
            model: ModelConfig { width: self.width, init_std: self.init_std },
            train: TrainSettings {
                epochs: self.epochs,
                batch_size: self.batch_size,
                lr: self.lr,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                step_size: self.lr_step,
                gamma: self.lr_gamma,
                rho: self.rho,
            },
            strategy,
            seed: self.seed,
        };
        validate(&cfg)?;
        Ok(cfg)
    }
}

/// Core validation plus the split fractions, which only the pool builder
/// would otherwise catch.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    cfg.validate().map_err(from_core)?;
    for (key, v) in [("init_labeled_frac", cfg.init_labeled_frac), ("test_frac", cfg.test_frac)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(ConfigError::Invalid { key: key.into(), reason: "must lie in (0, 1)".into() });
        }
    }
    if cfg.init_labeled_frac + cfg.test_frac >= 1.0 {
        return Err(ConfigError::Invalid {
            key: "init_labeled_frac".into(),
            reason: "init_labeled_frac + test_frac must leave an unlabeled pool".into(),
        });
    }
    Ok(())
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let file: FileConfig = serde_json::from_str(text)?;
    file.resolve()
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    parse_config_str(&text)
}

pub fn config_to_string(cfg: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(&FileConfig::from(cfg)).expect("plain struct serializes")
}

pub fn write_config(cfg: &ExperimentConfig, path: &Path) -> Result<(), ConfigError> {
    crate::output::write_atomic(path, config_to_string(cfg).as_bytes())
        .map_err(|source| ConfigError::Write { path: path.into(), source })
}
