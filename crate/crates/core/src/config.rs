//! The pipeline configuration file.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentRanges;
use crate::dataset::{BuildConfig, SubClass};
use crate::features::MfccConfig;
use crate::nn::TrainConfig;
use crate::stream::DetectorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

/// Settings for every stage. Missing keys take defaults; unknown keys are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sample_rate: u32,
    pub window_s: f64,
    pub augment: AugmentRanges,
    /// Training records per subclass.
    pub counts: std::collections::BTreeMap<SubClass, usize>,
    pub holdout_fraction: f64,
    pub mfcc: MfccConfig,
    pub train: TrainConfig,
    /// Conv filters, kernel size and dropout of the default architecture.
    pub model_filters: usize,
    pub model_kernel: usize,
    pub model_dropout: f64,
    pub search_space: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let build = BuildConfig::default();
        Self {
            sample_rate: crate::CANONICAL_SAMPLE_RATE,
            window_s: crate::WINDOW_SECONDS,
            augment: AugmentRanges::default(),
            counts: build.counts,
            holdout_fraction: build.holdout_fraction,
            mfcc: MfccConfig::default(),
            train: TrainConfig::default(),
            model_filters: 32,
            model_kernel: 3,
            model_dropout: 0.25,
            search_space: None,
            detector: DetectorConfig::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn build_config(&self) -> BuildConfig {
        BuildConfig {
            sample_rate: self.sample_rate,
            window_s: self.window_s,
            counts: self.counts.clone(),
            augment: AugmentRanges {
                window_s: self.window_s,
                ..self.augment.clone()
            },
            holdout_fraction: self.holdout_fraction,
            ..BuildConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, e: &dyn std::fmt::Display| ConfigError::Invalid {
            key,
            message: e.to_string(),
        };
        if self.sample_rate == 0 {
            return Err(invalid("sample_rate", &"must be positive"));
        }
        if !(self.window_s > 0.0 && self.window_s.is_finite()) {
            return Err(invalid("window_s", &"must be positive"));
        }
        self.build_config().validate().map_err(|e| invalid("counts", &e))?;
        self.mfcc.validate(self.sample_rate).map_err(|e| invalid("mfcc", &e))?;
        self.train.validate(usize::MAX).map_err(|e| invalid("train", &e))?;
        self.detector.validate().map_err(|e| invalid("detector", &e))?;
        if self.model_filters == 0 || self.model_kernel == 0 {
            return Err(invalid("model_filters", &"filters and kernel must be positive"));
        }
        if !(0.0..1.0).contains(&self.model_dropout) {
            return Err(invalid("model_dropout", &"must be in [0, 1)"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = PipelineConfig::from_json(r#"{"epochz": 3}"#).unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
        let err = PipelineConfig::from_json(r#"{"train": {"batch_size": 0}}"#).unwrap_err().to_string();
        assert!(err.contains("train"), "{err}");
    }
}
