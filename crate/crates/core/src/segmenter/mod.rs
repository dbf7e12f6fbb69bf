//! Downstream segmentation: a fixed 3D U-Net trained with a fused
//! Dice + cross-entropy loss under k-fold cross-validation.

mod loss;
mod train;
mod unet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use loss::{dice_ce_loss, dice_ce_value, DICE_EPS};
pub use train::{
    best_fold, fold_results_csv, predict, train_model, train_seg, FoldResult, SegModel, SegSample,
};
pub use unet::{build_unet, UNet, UNetConfig};

use crate::checkpoint::CheckpointError;
use crate::engine::EngineError;
use crate::metrics::MetricsError;
use crate::volume::VolumeError;

#[derive(Debug, Error)]
pub enum SegError {
    #[error("invalid segmenter config: {0}")]
    InvalidConfig(String),
    #[error("cannot split {n} samples into {k} folds")]
    TooFewSamples { n: usize, k: usize },
    #[error("fold {0} is empty")]
    EmptyFold(usize),
    #[error("extent {extent} along {axis} is not divisible by {factor}")]
    Indivisible {
        axis: char,
        extent: usize,
        factor: usize,
    },
    #[error("target class id {0} is outside 0..=3")]
    TargetId(u8),
    #[error("loss inputs disagree: {0}")]
    Shape(String),
    #[error("loss became non-finite in epoch {epoch} of fold {fold}")]
    NonFiniteLoss { fold: usize, epoch: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Training schedule and network shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegConfig {
    pub folds: usize,
    pub epochs: usize,
    pub lr: f32,
    pub net: UNetConfig,
    pub batch_size: usize,
    /// `lr · (1 − epoch/epochs)^0.9` instead of a constant rate.
    pub poly_decay: bool,
    pub seed: u64,
}

impl Default for SegConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            epochs: 60,
            lr: 0.01,
            net: UNetConfig::default(),
            batch_size: 1,
            poly_decay: false,
            seed: 0,
        }
    }
}

impl SegConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if self.folds < 2 {
            return Err(SegError::InvalidConfig(format!(
                "need at least 2 folds, got {}",
                self.folds
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SegError::InvalidConfig(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(SegError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.net.validate()
    }
}

/// Seeded partition of `0..n` into `k` folds. After shuffling, the first
/// `n % k` folds take one extra index. Only `n`, `k` and `seed` matter.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, SegError> {
    if k == 0 || n < k {
        return Err(SegError::TooFewSamples { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let folds = kfold_split(27, 5, 3).unwrap();
        let mut sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, [5, 5, 5, 6, 6]);
        let mut all: Vec<usize> = folds.concat();
        all.sort();
        assert_eq!(all, (0..27).collect::<Vec<_>>());
    }

    #[test]
    fn split_needs_enough_samples() {
        assert!(matches!(
            kfold_split(1, 2, 0),
            Err(SegError::TooFewSamples { n: 1, k: 2 })
        ));
    }
}
