//! Paired label-to-image 3D GAN: U-Net generator, PatchGAN discriminator,
//! adversarial + L1 training with on-the-fly augmentation, inference and
//! a checkerboard-artifact diagnostic.

mod augment;
mod checker;
mod loss;
mod models;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{augment_pair, gaussian_blur, rotate_pair};
pub use checker::checkerboard_energy;
pub use loss::{discriminator_loss, gan_loss, generator_loss, GanLosses};
pub use models::{build_discriminator, build_generator, Discriminator, Generator};
pub use train::{synthesize, train_gan, write_history_csv, EpochStats, GanModel, TrainingPair};

use crate::checkpoint::CheckpointError;
use crate::engine::EngineError;
use crate::volume::VolumeError;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("extent {extent} along {axis} is not divisible by {factor}")]
    Indivisible {
        axis: char,
        extent: usize,
        factor: usize,
    },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("checkerboard energy needs every extent >= 2, got {0:?}")]
    TooSmall([usize; 3]),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    /// Stride-2 transposed convolution, kernel 4.
    Transposed,
    /// Trilinear ×2 upsampling followed by a 3×3×3 convolution.
    Trilinear,
}

impl std::str::FromStr for UpsampleMode {
    type Err = GanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transposed" => Ok(UpsampleMode::Transposed),
            "trilinear" => Ok(UpsampleMode::Trilinear),
            other => Err(GanError::InvalidConfig(format!(
                "unknown upsample mode `{other}` (expected transposed or trilinear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub upsample_mode: UpsampleMode,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 16,
            upsample_mode: UpsampleMode::Transposed,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(GanError::InvalidConfig(
                "generator levels and base_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Input extents must be divisible by this factor on every axis.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub layers: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            base_channels: 16,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.layers == 0 || self.base_channels == 0 {
            return Err(GanError::InvalidConfig(
                "discriminator layers and base_channels must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Gaussian blur sigma range in voxels.
    pub blur_sigma_range: [f32; 2],
    /// Rotation about the depth (z) axis, drawn from ±this many degrees.
    pub rotation_degrees: f32,
    /// Chance of applying each of rotation and blur to a drawn pair.
    pub probability: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            blur_sigma_range: [0.0, 1.0],
            rotation_degrees: 10.0,
            probability: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            probability: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GanError> {
        let [lo, hi] = self.blur_sigma_range;
        if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
            return Err(GanError::InvalidConfig(format!(
                "blur sigma range must satisfy 0 <= lo <= hi, got {:?}",
                self.blur_sigma_range
            )));
        }
        if !(self.rotation_degrees >= 0.0 && self.rotation_degrees < 180.0) {
            return Err(GanError::InvalidConfig(format!(
                "rotation range must lie in [0, 180) degrees, got {}",
                self.rotation_degrees
            )));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(GanError::InvalidConfig(format!(
                "augmentation probability must lie in [0, 1], got {}",
                self.probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub lambda_l1: f32,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 2e-4,
            lambda_l1: 100.0,
            batch_size: 1,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<(), GanError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(GanError::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GanError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lambda_l1 >= 0.0 && self.lambda_l1.is_finite()) {
            return Err(GanError::InvalidConfig(format!(
                "lambda_l1 must be >= 0, got {}",
                self.lambda_l1
            )));
        }
        self.augment.validate()
    }
}
