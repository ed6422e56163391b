use std::fs;
use std::path::Path;

use eapcr_core::data::{OversampleConfig, PipelineConfig};
use eapcr_core::train::TrainConfig;
use eapcr_core::{ModelConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Every tunable of a run. A config file may set any subset of the fields;
/// the rest keep their defaults, and command-line flags win over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub variant: Variant,
    pub threshold: f64,
    pub window: usize,
    pub bins: usize,
    pub train_fraction: f64,
    pub oversample_ratio: f64,
    pub max_shift: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    pub embed_width: usize,
    pub lstm_width: usize,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    pub branch_width: usize,
    pub attention_prescale: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(1);
        let t = TrainConfig::default();
        let p = PipelineConfig::default();
        Self {
            seed: t.seed,
            variant: Variant::Full,
            threshold: 0.5,
            window: p.window,
            bins: p.bins,
            train_fraction: p.train_fraction,
            oversample_ratio: p.oversample.target_ratio,
            max_shift: p.oversample.max_shift,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            shuffle: t.shuffle,
            embed_width: m.embed_width,
            lstm_width: m.lstm_width,
            conv1_channels: m.conv1_channels,
            conv2_channels: m.conv2_channels,
            branch_width: m.branch_width,
            attention_prescale: m.attention_prescale,
        }
    }
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub window: Option<usize>,
    pub threshold: Option<f64>,
    pub epochs: Option<usize>,
    pub variant: Option<Variant>,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::ConfigFile {
            path: origin.into(),
            msg: e.to_string(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.into(),
            msg: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }

    /// Flag > file > default.
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        cfg.apply(flags);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, flags: &Overrides) {
        if let Some(v) = flags.seed {
            self.seed = v;
        }
        if let Some(v) = flags.window {
            self.window = v;
        }
        if let Some(v) = flags.threshold {
            self.threshold = v;
        }
        if let Some(v) = flags.epochs {
            self.epochs = v;
        }
        if let Some(v) = flags.variant {
            self.variant = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Core(eapcr_core::Error::Config(msg)));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if !(self.oversample_ratio > 0.0 && self.oversample_ratio < 1.0) {
            return bad(format!("oversample_ratio must lie in (0, 1), got {}", self.oversample_ratio));
        }
        self.train_config().validate()?;
        self.model_config(1).validate()?;
        Ok(())
    }

    pub fn model_config(&self, n_sensors: usize) -> ModelConfig {
        ModelConfig {
            n_sensors,
            window: self.window,
            bins: self.bins,
            embed_width: self.embed_width,
            lstm_width: self.lstm_width,
            conv1_channels: self.conv1_channels,
            conv2_channels: self.conv2_channels,
            branch_width: self.branch_width,
            attention_prescale: self.attention_prescale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            window: self.window,
            bins: self.bins,
            train_fraction: self.train_fraction,
            oversample: OversampleConfig {
                target_ratio: self.oversample_ratio,
                max_shift: self.max_shift,
            },
        }
    }

    /// Compact JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("RunConfig serializes");
        value.to_string()
    }
}
