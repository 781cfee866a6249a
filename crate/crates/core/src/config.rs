//! Run configuration: one TOML document covering data, feature selection,
//! augmentation, network, training, baselines and cross-validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::JitterConfig;
use crate::baselines::BaselineConfig;
use crate::dataset::{default_regressors, Target, MOTOR_UPDRS};
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::nn::NetConfig;
use crate::train::TrainConfig;

/// Environment variable naming the default dataset file.
pub const DATA_ENV: &str = "UPDRS_DATA";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceLayout {
    /// The selected features of one recording, one per step (T = k, d = 1).
    Features,
    /// The last `window` recordings of the same subject (T = window, d = k).
    SubjectWindows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset CSV; falls back to `$UPDRS_DATA` when unset.
    pub data: Option<String>,
    pub target: Target,
    pub regressors: Vec<String>,
    /// Columns kept by feature elimination, not counting `rfe_protected`.
    pub rfe_k: usize,
    /// Regressors exempt from elimination.
    pub rfe_protected: Vec<String>,
    pub forest: ForestParams,
    pub jitter: JitterConfig,
    pub sequence_layout: SequenceLayout,
    /// Steps per sample for `subject_windows`.
    pub window: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub baselines: BaselineConfig,
    pub k_folds: usize,
    pub test_fraction: f64,
    /// Keep every subject's recordings on one side of each split.
    pub grouped_splits: bool,
    /// Random subsample of this many records before anything else.
    pub max_rows: Option<usize>,
    pub seed: u64,
    pub out: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            target: Target::Total,
            regressors: default_regressors(),
            rfe_k: 10,
            rfe_protected: vec![MOTOR_UPDRS.to_string()],
            forest: ForestParams::default(),
            jitter: JitterConfig::default(),
            sequence_layout: SequenceLayout::Features,
            window: 5,
            net: NetConfig::default(),
            train: TrainConfig::default(),
            baselines: BaselineConfig::default(),
            k_folds: 5,
            test_fraction: 0.2,
            grouped_splits: false,
            max_rows: None,
            seed: 0,
            out: "runs".to_string(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Configured dataset path, else the environment default.
    pub fn data_path(&self) -> Result<String> {
        self.data
            .clone()
            .or_else(|| std::env::var(DATA_ENV).ok().filter(|s| !s.is_empty()))
            .ok_or_else(|| Error::Config(format!("no dataset given (set `data` or ${DATA_ENV})")))
    }

    /// Positions of the protected regressors within `regressors`.
    pub fn protected_indices(&self) -> Result<Vec<usize>> {
        self.rfe_protected
            .iter()
            .map(|name| {
                self.regressors
                    .iter()
                    .position(|r| r == name)
                    .ok_or_else(|| Error::Config(format!("protected column `{name}` is not a regressor")))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.regressors.is_empty() {
            return Err(Error::Config("regressor list is empty".into()));
        }
        let protected = self.protected_indices()?;
        let eligible = self.regressors.len() - protected.len();
        if self.rfe_k == 0 || self.rfe_k > eligible {
            return Err(Error::Config(format!("rfe_k must lie in 1..={eligible}, got {}", self.rfe_k)));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!("k_folds must be >= 2, got {}", self.k_folds)));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.sequence_layout == SequenceLayout::SubjectWindows && self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        if self.max_rows == Some(0) {
            return Err(Error::Config("max_rows must be >= 1".into()));
        }
        if !(self.jitter.sigma_scale >= 0.0) {
            return Err(Error::Config("jitter.sigma_scale must be >= 0".into()));
        }
        self.net.validate()?;
        self.train.validate()?;
        self.baselines.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.net.units, 100);
        assert_eq!(cfg.net.dropout, 0.3);
        assert_eq!(cfg.train.schedule.initial, 0.001);
        assert_eq!(cfg.k_folds, 5);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 64);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::from_toml_str("sed = 7"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("[net]\nunit = 3").is_err());
        assert!(RunConfig::from_toml_str("[train.schedule]\ndecay = 0.5").is_err());
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig {
            rfe_k: 20,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.rfe_k = 19;
        cfg.validate().unwrap();
        cfg.rfe_protected = vec!["nope".into()];
        assert!(cfg.validate().is_err());
    }
}
