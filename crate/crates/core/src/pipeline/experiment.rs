//! End-to-end experiment: phantoms, GAN, synthesis, post-processing,
//! datasets, cross-validated segmentation and report tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset::{
    build_dataset, write_file, DatasetRecipe, DatasetSources, PostprocSettings, RecipeRef,
    SourcePair,
};
use super::v3d::{save_volume, VolumeData};
use super::PipelineError;
use crate::gan3d::{
    synthesize, train_gan, write_history_csv, AugmentConfig, DiscriminatorConfig, GanTrainConfig,
    GeneratorConfig, TrainingPair, UpsampleMode,
};
use crate::metrics::{
    aggregate_rows_csv, report_tables, structure_scores_csv, AggregateRow, Metric, StructureScores,
    TableLayout,
};
use crate::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use crate::postproc::ConeSpec;
use crate::segmenter::{
    best_fold, fold_results_csv, predict, train_seg, SegConfig, SegModel, UNetConfig,
};
use crate::volume::{LabelVolume, Structure, Volume};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f32; 3],
}

/// Phantom counts per role. Each role draws from its own seed block, so
/// GAN-training, synthetic-label, "real" and test phantoms never share
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cohort {
    pub gan_training: usize,
    pub synthetic_labels: usize,
    pub real: usize,
    pub test: usize,
}

/// Seeds per role block.
pub const SEED_BLOCK: u64 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    GanTraining = 0,
    SyntheticLabels = 1,
    Real = 2,
    Test = 3,
}

impl Role {
    fn dir(self) -> &'static str {
        match self {
            Role::GanTraining => "gan_training",
            Role::SyntheticLabels => "synthetic",
            Role::Real => "real",
            Role::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub grid: Grid,
    pub cohort: Cohort,
    pub render: RenderParams,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub gan_training: GanTrainConfig,
    pub postproc: PostprocSettings,
    pub segmentation: SegConfig,
    pub recipes: Vec<RecipeRef>,
    /// Not part of the config hash.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Small enough to run every stage of all seven models on a laptop CPU
    /// in a minute or two.
    pub fn desk() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 7,
            grid: Grid {
                dims: [16, 16, 8],
                spacing: [8.0; 3],
            },
            cohort: Cohort {
                gan_training: 8,
                synthetic_labels: 27,
                real: 17,
                test: 6,
            },
            render: RenderParams::default(),
            generator: GeneratorConfig {
                levels: 3,
                base_channels: 8,
                upsample_mode: UpsampleMode::Trilinear,
            },
            discriminator: DiscriminatorConfig {
                layers: 3,
                base_channels: 8,
            },
            gan_training: GanTrainConfig {
                epochs: 10,
                augment: AugmentConfig::disabled(),
                ..Default::default()
            },
            postproc: PostprocSettings::default(),
            segmentation: SegConfig {
                epochs: 4,
                net: UNetConfig {
                    levels: 3,
                    base_channels: 8,
                },
                ..Default::default()
            },
            recipes: super::dataset::RECIPE_NAMES
                .iter()
                .map(|n| RecipeRef::Named(n.to_string()))
                .collect(),
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_recipes(&self) -> Result<Vec<DatasetRecipe>, PipelineError> {
        self.recipes.iter().map(RecipeRef::resolve).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!(
                "schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let c = self.cohort;
        for (name, n) in [
            ("gan_training", c.gan_training),
            ("synthetic_labels", c.synthetic_labels),
            ("real", c.real),
            ("test", c.test),
        ] {
            if n as u64 > SEED_BLOCK {
                return bad(format!("cohort.{name} = {n} exceeds {SEED_BLOCK}"));
            }
        }
        if c.gan_training == 0 || c.test == 0 {
            return bad("cohort needs at least one GAN-training and one test phantom".into());
        }
        let recipes = self.resolved_recipes()?;
        if recipes.is_empty() {
            return bad("no recipes to run".into());
        }
        let mut names: Vec<&str> = recipes.iter().map(|r| r.name.as_str()).collect();
        names.sort();
        names.dedup();
        if names.len() != recipes.len() {
            return bad("recipe names must be unique".into());
        }
        for r in &recipes {
            if r.real > c.real || r.synthetic > c.synthetic_labels {
                return bad(format!(
                    "{} needs {} real + {} synthetic pairs; cohort provides {} + {}",
                    r.name, r.real, r.synthetic, c.real, c.synthetic_labels
                ));
            }
            if r.len() < self.segmentation.folds {
                return bad(format!(
                    "{} has {} pairs, fewer than {} folds",
                    r.name,
                    r.len(),
                    self.segmentation.folds
                ));
            }
        }
        self.segmentation.validate()?;
        self.gan_training.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.render.validate()?;
        Ok(())
    }

    /// SHA-256 of the config JSON with the output directory blanked.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn phantom_seed(&self, role: Role, i: usize) -> u64 {
        self.seed
            .wrapping_mul(4 * SEED_BLOCK)
            .wrapping_add(role as u64 * SEED_BLOCK + i as u64)
    }
}

/// Paths and tables produced by [`run_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Model names in recipe order.
    pub models: Vec<String>,
    /// `(dataset name, entry count)` in recipe order.
    pub manifest_counts: Vec<(String, usize)>,
    pub validation_table: String,
    pub test_table: String,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T, PipelineError>) -> Result<T, PipelineError> {
    log::info!("stage {name}");
    f().map_err(|e| PipelineError::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

/// Mid-z slice as a binary PGM, intensities in [0, 1] mapped to 0..255.
pub fn write_pgm_mid_slice(vol: &Volume, path: &Path) -> Result<(), PipelineError> {
    let [nx, ny, nz] = vol.dims();
    let z = nz / 2;
    let mut bytes = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for y in 0..ny {
        for x in 0..nx {
            bytes.push((vol.get(x, y, z).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    write_file(path, &bytes)
}

struct Cases {
    pairs: Vec<SourcePair>,
    volumes: Vec<(Volume, LabelVolume)>,
}

fn phantom_cases(
    cfg: &ExperimentConfig,
    role: Role,
    n: usize,
    dir: &Path,
) -> Result<Cases, PipelineError> {
    let cone = ConeSpec::default_for(cfg.grid.dims, cfg.grid.spacing);
    let mut pairs = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for i in 0..n {
        let seed = cfg.phantom_seed(role, i);
        let labels = generate_phantom_labels(
            &HeartPhantomParams::sample(seed),
            cfg.grid.dims,
            cfg.grid.spacing,
        )?;
        let image = render_pseudo_ultrasound(&labels, &cone, &cfg.render, seed)?;
        let pair = SourcePair {
            image: dir.join(format!("{i:03}_image.v3d")),
            labels: dir.join(format!("{i:03}_labels.v3d")),
        };
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        save_volume(&VolumeData::Labels(labels.clone()), &pair.labels)?;
        if role != Role::SyntheticLabels {
            save_volume(&VolumeData::Intensity(image.clone()), &pair.image)?;
        }
        pairs.push(pair);
        volumes.push((image, labels));
    }
    Ok(Cases { pairs, volumes })
}

/// Runs every stage in order and writes the report bundle under
/// `cfg.output_dir`. Outputs of completed stages stay on disk when a later
/// stage fails.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle, PipelineError> {
    stage("config", || cfg.validate())?;
    let out = cfg.output_dir.clone();
    let hash = cfg.hash();
    let recipes = cfg.resolved_recipes()?;
    stage("config", || {
        write_file(&out.join("config.json"), cfg.to_json().as_bytes())?;
        write_file(&out.join("config_hash.txt"), format!("{hash}\n").as_bytes())
    })?;

    let vol_dir = out.join("volumes");
    let c = cfg.cohort;
    let (gan_cases, synth_cases, real_cases, test_cases) = stage("phantoms", || {
        Ok((
            phantom_cases(
                cfg,
                Role::GanTraining,
                c.gan_training,
                &vol_dir.join(Role::GanTraining.dir()),
            )?,
            phantom_cases(
                cfg,
                Role::SyntheticLabels,
                c.synthetic_labels,
                &vol_dir.join(Role::SyntheticLabels.dir()),
            )?,
            phantom_cases(cfg, Role::Real, c.real, &vol_dir.join(Role::Real.dir()))?,
            phantom_cases(cfg, Role::Test, c.test, &vol_dir.join(Role::Test.dir()))?,
        ))
    })?;

    let model = stage("train-gan", || {
        let pairs: Vec<TrainingPair> = gan_cases
            .volumes
            .iter()
            .map(|(image, labels)| TrainingPair {
                image: image.clone(),
                labels: labels.clone(),
            })
            .collect();
        let (model, history) = train_gan(
            &pairs,
            &cfg.generator,
            &cfg.discriminator,
            &cfg.gan_training,
        )?;
        write_file(
            &out.join("gan").join("gan_history.csv"),
            write_history_csv(&history).as_bytes(),
        )?;
        model
            .to_checkpoint()
            .save(out.join("gan").join("gan.ckpt"))?;
        Ok(model)
    })?;

    stage("synth", || {
        for (i, ((_, labels), pair)) in synth_cases
            .volumes
            .iter()
            .zip(&synth_cases.pairs)
            .enumerate()
        {
            let image = synthesize(&model.generator, labels)?;
            save_volume(&VolumeData::Intensity(image.clone()), &pair.image)?;
            if i == 0 {
                write_pgm_mid_slice(&image, &out.join("previews").join("synthetic_000.pgm"))?;
                write_pgm_mid_slice(
                    &labels.to_intensity(),
                    &out.join("previews").join("labels_000.pgm"),
                )?;
            }
        }
        if let Some((image, _)) = real_cases.volumes.first() {
            write_pgm_mid_slice(image, &out.join("previews").join("real_000.pgm"))?;
        }
        Ok(())
    })?;

    let sources = DatasetSources {
        real: real_cases.pairs.clone(),
        synthetic: synth_cases.pairs.clone(),
    };
    let mut manifest_counts = Vec::with_capacity(recipes.len());
    let mut validation_rows = Vec::new();
    let mut test_rows = Vec::new();
    let mut all_folds = String::from("model,structure,fold,dice\n");
    let mut all_test_scores = String::new();
    let mut best_folds = String::from("model,best_fold\n");
    for recipe in &recipes {
        let model_name = recipe.model_name();
        let ds_dir = out.join("datasets").join(&recipe.name);
        let manifest = stage(&format!("build-dataset {}", recipe.name), || {
            let m = build_dataset(recipe, &sources, &cfg.postproc, &ds_dir, &hash)?;
            m.validate(recipe, &ds_dir)?;
            Ok(m)
        })?;
        manifest_counts.push((recipe.name.clone(), manifest.entries.len()));

        let folds = stage(&format!("train-seg {model_name}"), || {
            let samples = manifest.load_samples(&ds_dir)?;
            let folds = train_seg(&samples, &cfg.segmentation)?;
            let model_dir = out.join("models").join(&model_name);
            for f in &folds {
                f.checkpoint
                    .save(model_dir.join(format!("fold{}.ckpt", f.fold_index + 1)))?;
            }
            let csv = fold_results_csv(&model_name, &folds);
            write_file(&model_dir.join("fold_results.csv"), csv.as_bytes())?;
            all_folds.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
            Ok(folds)
        })?;

        stage(&format!("evaluate {model_name}"), || {
            for s in Structure::ALL {
                let scores: Vec<f64> = folds.iter().map(|f| f.dice[&s]).collect();
                validation_rows.push(AggregateRow::from_scores(
                    &model_name,
                    Metric::Dice(s),
                    &scores,
                )?);
            }
            let best = best_fold(&folds).expect("at least two folds");
            let seg = SegModel::from_checkpoint(&folds[best].checkpoint)?;
            let mut cases = Vec::with_capacity(test_cases.volumes.len());
            for (i, (image, labels)) in test_cases.volumes.iter().enumerate() {
                let pred = predict(&seg, image)?;
                cases.push(StructureScores::compute(
                    format!("{model_name}/test{i:03}"),
                    &pred,
                    labels,
                )?);
            }
            for s in Structure::ALL {
                let v: Vec<f64> = cases.iter().map(|c| c.dice[&s]).collect();
                test_rows.push(AggregateRow::from_scores(&model_name, Metric::Dice(s), &v)?);
            }
            let vs: Vec<f64> = cases.iter().filter_map(|c| c.vs).collect();
            test_rows.push(AggregateRow::from_scores(
                &model_name,
                Metric::HeartVs,
                &vs,
            )?);
            let csv = structure_scores_csv(&cases);
            if all_test_scores.is_empty() {
                all_test_scores.push_str(csv.lines().next().unwrap_or_default());
                all_test_scores.push('\n');
            }
            all_test_scores.extend(csv.lines().skip(1).map(|l| format!("{l}\n")));
            let _ = writeln!(best_folds, "{model_name},{}", best + 1);
            Ok(())
        })?;
    }

    let (validation_table, test_table) = stage("report", || {
        let validation_table = report_tables(&validation_rows, TableLayout::Validation)?;
        let test_table = report_tables(&test_rows, TableLayout::Test)?;
        write_file(&out.join("fold_results.csv"), all_folds.as_bytes())?;
        write_file(
            &out.join("validation_aggregate.csv"),
            aggregate_rows_csv(&validation_rows).as_bytes(),
        )?;
        write_file(
            &out.join("validation_table.txt"),
            validation_table.as_bytes(),
        )?;
        write_file(&out.join("test_scores.csv"), all_test_scores.as_bytes())?;
        write_file(&out.join("best_folds.csv"), best_folds.as_bytes())?;
        write_file(
            &out.join("test_aggregate.csv"),
            aggregate_rows_csv(&test_rows).as_bytes(),
        )?;
        write_file(&out.join("test_table.txt"), test_table.as_bytes())?;
        let mut counts = String::from("dataset,entries\n");
        for (n, k) in &manifest_counts {
            let _ = writeln!(counts, "{n},{k}");
        }
        write_file(&out.join("manifest_counts.csv"), counts.as_bytes())?;
        Ok((validation_table, test_table))
    })?;

    Ok(ReportBundle {
        out_dir: out,
        config_hash: hash,
        models: recipes.iter().map(DatasetRecipe::model_name).collect(),
        manifest_counts,
        validation_table,
        test_table,
    })
}
