//! Run configuration: a flat TOML document in which every key is optional.

use std::path::{Path, PathBuf};

use ctseg::train::TrainRunConfig;
use ctseg::{EncoderKind, UNetConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Directory holding the split manifests written by `prepare`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,

    pub depth: usize,
    pub base_channels: usize,
    /// "plain" or "separable".
    pub encoder: String,
    pub input_size: usize,
    pub decoder_batchnorm: bool,

    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub decay_factor: f64,
    pub min_lr: f64,
    pub improvement_threshold: f64,
    pub early_stop: bool,
    pub early_stop_patience: usize,
    /// Write `checkpoint_epoch<N>.csegw` every N epochs; 0 disables.
    pub checkpoint_every: usize,

    pub pixel_threshold: f32,
    /// Minimum largest-component area for a positive slice; 0 scales 50 px
    /// at 512² to the input size.
    pub min_area: usize,
    pub consecutive_k: usize,
    pub overlay_alpha: f32,

    pub split_train: f64,
    pub split_validation: f64,
    pub split_test: f64,
    pub prevalence: f64,

    pub bootstrap_resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = UNetConfig::default();
        let train = TrainRunConfig::default();
        RunConfig {
            schema_version: SCHEMA_VERSION,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            seed: 0,
            depth: net.depth,
            base_channels: net.base_channels,
            encoder: net.encoder.to_string(),
            input_size: net.input_size,
            decoder_batchnorm: net.decoder_batchnorm,
            max_epochs: train.max_epochs,
            batch_size: train.batch_size,
            learning_rate: train.initial_lr,
            patience: train.patience,
            decay_factor: train.decay_factor,
            min_lr: train.min_lr,
            improvement_threshold: train.improvement_threshold,
            early_stop: train.early_stop,
            early_stop_patience: train.early_stop_patience,
            checkpoint_every: train.checkpoint_every,
            pixel_threshold: 0.5,
            min_area: 0,
            consecutive_k: ctseg::inference::DEFAULT_K,
            overlay_alpha: 0.4,
            split_train: 0.6,
            split_validation: 0.2,
            split_test: 0.2,
            prevalence: 0.2,
            bootstrap_resamples: 2000,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Input(format!("config: {e}")))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Input(format!(
                "config: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// The file at `path`, or the defaults when no path is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn unet(&self) -> Result<UNetConfig, CliError> {
        let encoder: EncoderKind = self
            .encoder
            .parse()
            .map_err(|e| CliError::Input(format!("config: {e}")))?;
        let cfg = UNetConfig {
            depth: self.depth,
            base_channels: self.base_channels,
            encoder,
            input_size: self.input_size,
            decoder_batchnorm: self.decoder_batchnorm,
            ..UNetConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn training(&self) -> Result<TrainRunConfig, CliError> {
        let cfg = TrainRunConfig {
            max_epochs: self.max_epochs,
            batch_size: self.batch_size,
            initial_lr: self.learning_rate,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            early_stop: self.early_stop,
            early_stop_patience: self.early_stop_patience,
            patience: self.patience,
            decay_factor: self.decay_factor,
            min_lr: self.min_lr,
            improvement_threshold: self.improvement_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn split_ratios(&self) -> [f64; 3] {
        [self.split_train, self.split_validation, self.split_test]
    }
}
