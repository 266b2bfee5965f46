//! Progressive adversarial training: configuration, schedule, losses, the
//! step loop and checkpoints.

mod checkpoint;
mod losses;
mod schedule;
mod trainer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use checkpoint::{checkpoint_bytes, load_checkpoint, save_checkpoint, trainer_from_bytes, CHECKPOINT_VERSION};
pub use losses::{
    adversarial_losses, critic_loss, generator_loss, gradient_penalty, gradient_penalty_at, interpolate,
    penalty_for, LossConfig,
};
pub use schedule::{PhaseSpec, Progress, Schedule, ScheduleConfig};
pub use trainer::{generate_with, StepMetrics, Trainer};

use crate::data::{FaceDataset, SyntheticConfig};
use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::nn::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmaSettings {
    /// Images over which the running average's weight on old values halves.
    pub half_life_images: f64,
}

impl Default for EmaSettings {
    fn default() -> Self {
        EmaSettings { half_life_images: 1e4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Index,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Used when `source = "synthetic"`.
    pub synthetic: SyntheticConfig,
    /// Index file and image directory, used when `source = "index"`.
    pub index: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            index: None,
            image_root: None,
        }
    }
}

impl DataConfig {
    /// Load the dataset at crop resolution `resolution`.
    pub fn load(&self, resolution: usize) -> Result<FaceDataset> {
        match self.source {
            DataSource::Synthetic => {
                if self.synthetic.resolution != resolution {
                    return Err(Error::Config(format!(
                        "synthetic crops are {0}x{0} but the networks grow to {1}x{1}",
                        self.synthetic.resolution, resolution
                    )));
                }
                FaceDataset::synthetic(self.synthetic.count, resolution, self.synthetic.seed)
            }
            DataSource::Index => {
                let index = self
                    .index
                    .as_deref()
                    .ok_or_else(|| Error::Config("data.index is required for an index source".into()))?;
                let root = self.image_root.as_deref().unwrap_or(Path::new("."));
                FaceDataset::from_index(index, root, resolution)
            }
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    pub ema: EmaSettings,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            ema: EmaSettings::default(),
            data: DataConfig {
                synthetic: SyntheticConfig {
                    resolution: 128,
                    ..SyntheticConfig::default()
                },
                ..DataConfig::default()
            },
        }
    }
}

impl TrainConfig {
    /// Small networks on 32x32 synthetic faces; runs in minutes on a CPU.
    pub fn toy() -> Self {
        TrainConfig {
            generator: GeneratorConfig {
                max_resolution: 32,
                filters: vec![32, 32, 32],
                ..GeneratorConfig::default()
            },
            discriminator: DiscriminatorConfig {
                max_resolution: 32,
                filters: vec![32, 32, 32],
                ..DiscriminatorConfig::default()
            },
            ema: EmaSettings { half_life_images: 500.0 },
            data: DataConfig::default(),
            ..TrainConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let (g, d) = (&self.generator, &self.discriminator);
        if g.base_resolution != d.base_resolution || g.max_resolution != d.max_resolution {
            return Err(Error::Config(
                "generator and discriminator must share one resolution ladder".into(),
            ));
        }
        Schedule::new(&self.schedule, g.base_resolution, g.max_resolution)?;
        if !(self.ema.half_life_images > 0.0) {
            return Err(Error::Config("ema.half_life_images must be positive".into()));
        }
        if !(self.loss.gp_lambda.is_finite() && self.loss.drift.is_finite()) {
            return Err(Error::Config("loss coefficients must be finite".into()));
        }
        Ok(())
    }
}
