use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::unet::check_divisible;
use super::{build_unet, dice_ce_loss, kfold_split, SegConfig, SegError, UNet, UNetConfig};
use crate::checkpoint::{CheckpointError, ModelCheckpoint};
use crate::engine::{Adam, Tape, Tensor};
use crate::metrics::{aggregate, StructureScores};
use crate::volume::{LabelVolume, Structure, Volume, VolumeError, NUM_CLASSES};

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const POLY_POWER: f32 = 0.9;

/// One labelled image.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub image: Volume,
    pub labels: LabelVolume,
}

/// A trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct SegModel {
    pub unet: UNet,
}

impl SegModel {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            config: serde_json::json!({
                "kind": "segmenter",
                "unet": self.unet.config(),
            }),
            params: self.unet.params().iter().cloned().collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self, SegError> {
        let bad = |m: String| SegError::Checkpoint(CheckpointError::Config(m));
        if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some("segmenter") {
            return Err(bad("not a segmenter checkpoint".into()));
        }
        let cfg: UNetConfig =
            serde_json::from_value(ckpt.config["unet"].clone()).map_err(|e| bad(e.to_string()))?;
        let mut unet = build_unet(&cfg, 0)?;
        unet.params_mut().assign(&ckpt.params)?;
        Ok(Self { unet })
    }
}

/// Per-volume z-score; constant volumes are only centred.
fn normalize(vol: &Volume) -> Volume {
    let mean = vol.mean();
    let var = vol
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / vol.len() as f64;
    let std = if var > 1e-12 { var.sqrt() } else { 1.0 };
    vol.map(|v| ((v as f64 - mean) / std) as f32)
}

fn check_samples(samples: &[SegSample], divisor: usize) -> Result<(), SegError> {
    let Some(first) = samples.first() else {
        return Err(SegError::EmptyFold(0));
    };
    let dims = first.image.dims();
    for s in samples {
        if s.image.dims() != dims {
            return Err(VolumeError::Mismatch(dims, s.image.dims()).into());
        }
        if s.labels.dims() != dims {
            return Err(VolumeError::Mismatch(dims, s.labels.dims()).into());
        }
    }
    let [nx, ny, nz] = dims;
    check_divisible(&[1, 1, nz, ny, nx], divisor)
}

fn train_fold(
    samples: &[&SegSample],
    cfg: &SegConfig,
    seed: u64,
    fold: usize,
) -> Result<(SegModel, Vec<f64>), SegError> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut unet = build_unet(&cfg.net, master.gen())?;
    let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut adam = Adam::new(unet.params(), cfg.lr, ADAM_BETA1, ADAM_BETA2)?;
    let images: Vec<Volume> = samples.iter().map(|s| normalize(&s.image)).collect();

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.poly_decay {
            adam.lr = cfg.lr * (1.0 - epoch as f32 / cfg.epochs as f32).powf(POLY_POWER);
        }
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Volume> = chunk.iter().map(|&i| &images[i]).collect();
            let x = Volume::batch_tensor(&batch)?;
            let target: Vec<u8> = chunk
                .iter()
                .flat_map(|&i| samples[i].labels.classes().iter().copied())
                .collect();
            let mut tape = Tape::new();
            let vars = unet.params().bind(&mut tape, true);
            let xv = tape.constant(x);
            let logits = unet.forward(&mut tape, &vars, xv)?;
            let loss = dice_ce_loss(&mut tape, logits, &target)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(SegError::NonFiniteLoss { fold, epoch });
            }
            let mut grads = tape.backward(loss)?;
            unet.params_mut().absorb_grads(&vars, &mut grads)?;
            adam.step(unet.params_mut())?;
            total += value as f64;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("seg fold {fold} epoch {epoch}: loss {mean:.4}");
        history.push(mean);
    }
    Ok((SegModel { unet }, history))
}

/// Trains one network on every sample (no held-out data). Returns the
/// model and the per-epoch mean loss.
pub fn train_model(
    samples: &[SegSample],
    cfg: &SegConfig,
) -> Result<(SegModel, Vec<f64>), SegError> {
    cfg.validate()?;
    check_samples(samples, cfg.net.divisor())?;
    let refs: Vec<&SegSample> = samples.iter().collect();
    train_fold(&refs, cfg, cfg.seed, 0)
}

/// Per-voxel argmax of the class logits; ties go to the lower class id.
pub fn predict(model: &SegModel, vol: &Volume) -> Result<LabelVolume, SegError> {
    let input = normalize(vol);
    let [nx, ny, nz] = input.dims();
    check_divisible(&[1, 1, nz, ny, nx], model.unet.config().divisor())?;
    let mut tape = Tape::new();
    let vars = model.unet.params().bind(&mut tape, false);
    let x = tape.constant(input.to_tensor());
    let logits = model.unet.forward(&mut tape, &vars, x)?;
    Ok(argmax_labels(
        tape.value(logits),
        vol.dims(),
        vol.spacing(),
    )?)
}

fn argmax_labels(
    logits: &Tensor,
    dims: [usize; 3],
    spacing: [f32; 3],
) -> Result<LabelVolume, VolumeError> {
    let data = logits.data();
    let voxels: usize = dims.iter().product();
    let classes = (0..voxels)
        .map(|v| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if data[c * voxels + v] > data[best * voxels + v] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new(dims, spacing, classes)
}

/// Outcome of one cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold_index: usize,
    /// Mean validation Dice per structure over the held-out volumes.
    pub dice: BTreeMap<Structure, f64>,
    pub validation_indices: Vec<usize>,
    pub case_scores: Vec<StructureScores>,
    pub loss_history: Vec<f64>,
    pub checkpoint: ModelCheckpoint,
}

impl FoldResult {
    pub fn mean_dice(&self) -> f64 {
        self.dice.values().sum::<f64>() / self.dice.len() as f64
    }
}

/// k-fold cross-validation: one fresh network per fold, trained on the
/// other folds for `cfg.epochs` and scored on the held-out fold with the
/// last-epoch weights.
pub fn train_seg(samples: &[SegSample], cfg: &SegConfig) -> Result<Vec<FoldResult>, SegError> {
    cfg.validate()?;
    let folds = kfold_split(samples.len(), cfg.folds, cfg.seed)?;
    check_samples(samples, cfg.net.divisor())?;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fold_seeds: Vec<u64> = (0..cfg.folds).map(|_| seeds.gen()).collect();

    let mut results = Vec::with_capacity(cfg.folds);
    for (f, val) in folds.iter().enumerate() {
        let train: Vec<&SegSample> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().map(|&i| &samples[i]))
            .collect();
        if val.is_empty() || train.is_empty() {
            return Err(SegError::EmptyFold(f));
        }
        log::info!(
            "seg fold {f}: {} training / {} validation volumes",
            train.len(),
            val.len()
        );
        let (model, history) = train_fold(&train, cfg, fold_seeds[f], f)?;
        let mut case_scores = Vec::with_capacity(val.len());
        for &i in val {
            let pred = predict(&model, &samples[i].image)?;
            case_scores.push(StructureScores::compute(
                i.to_string(),
                &pred,
                &samples[i].labels,
            )?);
        }
        let mut dice = BTreeMap::new();
        for s in Structure::ALL {
            let per_case: Vec<f64> = case_scores.iter().map(|c| c.dice[&s]).collect();
            dice.insert(s, aggregate(&per_case)?.0);
        }
        results.push(FoldResult {
            fold_index: f,
            dice,
            validation_indices: val.clone(),
            case_scores,
            loss_history: history,
            checkpoint: model.to_checkpoint(),
        });
    }
    Ok(results)
}

/// Fold with the highest mean validation Dice across structures; the
/// lowest index wins ties.
pub fn best_fold(results: &[FoldResult]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in results {
        let m = r.mean_dice();
        if best.map_or(true, |(_, b)| m > b) {
            best = Some((r.fold_index, m));
        }
    }
    best.map(|(i, _)| i)
}

/// `model,structure,fold,dice` rows (folds numbered from 1).
pub fn fold_results_csv(model: &str, results: &[FoldResult]) -> String {
    let mut out = String::from("model,structure,fold,dice\n");
    for s in Structure::ALL {
        for r in results {
            let _ = writeln!(out, "{model},{s},{},{}", r.fold_index + 1, r.dice[&s]);
        }
    }
    out
}
