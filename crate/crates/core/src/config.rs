//! Run configuration files (TOML, one table per concern).
//!
//! ```toml
//! [model]
//! prototypes_per_class = 5
//! latent_dim = 256
//!
//! [train]
//! variant = "panvae"
//! epochs = 10
//!
//! [loss]
//! diversity = 100.0
//!
//! [data]
//! train = "data/mnist"
//! train_limit = 10000
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, Variant};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// File name used when a run echoes its configuration next to its outputs.
pub const ECHO_FILE: &str = "run.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Taken from the training data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    pub prototypes_per_class: usize,
    pub latent_dim: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub conv_blocks: usize,
    pub base_channels: usize,
    pub hidden_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::for_images(2, (1, 28, 28));
        ModelSection {
            num_classes: None,
            prototypes_per_class: m.prototypes_per_class,
            latent_dim: m.latent_dim,
            epsilon: m.epsilon,
            seed: m.seed,
            conv_blocks: m.conv_blocks,
            base_channels: m.base_channels,
            hidden_dim: m.hidden_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub variant: Variant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            variant: t.variant,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            eval_every: t.eval_every,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    /// Held-out set. Without it, `holdout_fraction` of the training data is
    /// split off when set, otherwise no evaluation runs during training.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Keep only the first N training images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub loss: LossWeights,
    pub data: DataSection,
}

fn config_error(origin: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{origin}: {e}"))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_error("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| config_error(&path.display().to_string(), e))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(&path.display().to_string(), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        self.train_config(None).validate()?;
        let m = &self.model;
        if m.prototypes_per_class < 1 {
            return Err(Error::Config("prototypes_per_class must be >= 1".into()));
        }
        if m.latent_dim < m.prototypes_per_class {
            return Err(Error::Config(format!(
                "latent_dim ({}) must be at least prototypes_per_class ({})",
                m.latent_dim, m.prototypes_per_class
            )));
        }
        if !(m.epsilon > 0.0 && m.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                m.epsilon
            )));
        }
        if m.num_classes.is_some_and(|k| k < 2) {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if let Some(f) = self.data.holdout_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Config(format!(
                    "holdout_fraction must lie in (0, 1), got {f}"
                )));
            }
        }
        Ok(())
    }

    pub fn model_config(
        &self,
        num_classes: usize,
        input_shape: (usize, usize, usize),
    ) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            num_classes: m.num_classes.unwrap_or(num_classes),
            prototypes_per_class: m.prototypes_per_class,
            latent_dim: m.latent_dim,
            input_shape,
            epsilon: m.epsilon,
            seed: m.seed,
            conv_blocks: m.conv_blocks,
            base_channels: m.base_channels,
            hidden_dim: m.hidden_dim,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            variant: t.variant,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            weights: self.loss.clone(),
            seed: t.seed,
            checkpoint_dir,
            eval_every: t.eval_every,
        }
    }

    /// Sets both the model and the training seed.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
    }

    /// Loads the training set and, if configured, a held-out set.
    pub fn load_data(&self) -> Result<(Dataset, Option<Dataset>)> {
        let d = &self.data;
        let path = d.train.as_deref().ok_or_else(|| {
            Error::Data("no training data given (set --data or [data] train)".into())
        })?;
        let mut train = load_dataset(path, Split::Train)?;
        let mut test = match &d.test {
            Some(p) => Some(load_dataset(p, Split::Test)?),
            None => None,
        };
        if test.is_none() {
            if let Some(f) = d.holdout_fraction {
                let (tr, ho) = train.split_validation(f, self.train.seed)?;
                train = tr;
                test = Some(ho);
            }
        }
        if let Some(n) = d.train_limit {
            train = train.head(n);
        }
        if let (Some(n), Some(t)) = (d.test_limit, test.as_mut()) {
            *t = t.head(n);
        }
        Ok((train, test))
    }
}
