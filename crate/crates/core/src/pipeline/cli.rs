//! `echosynth` command line. Each subcommand wraps one library operation;
//! experiment parameters come from an optional JSON config (desk defaults
//! otherwise) with a few flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::dataset::{resolve, write_file};
use super::{
    build_dataset, load_volume, run_experiment, save_volume, DatasetManifest, DatasetRecipe,
    DatasetSources, ExperimentConfig, ManifestEntry, PipelineError, Provenance, SourcePair,
    VolumeData, MANIFEST_SCHEMA_VERSION,
};
use crate::checkpoint::ModelCheckpoint;
use crate::gan3d::{synthesize, train_gan, write_history_csv, GanModel, TrainingPair};
use crate::metrics::{
    aggregate_rows_csv, dice, report_tables, volume_similarity, AggregateRow, Metric,
    StructureScores, TableLayout, HEART_CLASSES,
};
use crate::phantom::{generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams};
use crate::postproc::{
    postprocess, ConeSpec, PostprocFlags, Threshold, ThresholdRule, WaveletFamily, WaveletSpec,
};
use crate::segmenter::{best_fold, fold_results_csv, predict, train_seg, SegModel};
use crate::volume::Structure;

#[derive(Debug, Parser)]
#[command(
    name = "echosynth",
    version,
    about = "Synthetic 3D echocardiography pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Experiment config JSON (desk defaults when omitted).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<ExperimentConfig, PipelineError> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::desk()),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample phantom label volumes (and optionally oracle renders).
    GenPhantoms {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also render images and write a pair manifest.
        #[arg(long)]
        render: bool,
    },
    /// Render a pseudo-ultrasound image from a label volume.
    Render {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the label-to-image GAN on a pair manifest.
    TrainGan {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Synthesize an image from a label volume with a trained GAN.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Wavelet denoising and/or cone re-masking of an image.
    Postprocess {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `family:levels`, e.g. `sym4:2`.
        #[arg(long)]
        wavelet: Option<String>,
        /// `hard`, `soft` (universal threshold), `hard:T` / `soft:T`, or `none`.
        #[arg(long, default_value = "hard")]
        threshold: String,
        /// `default` for the grid's standard sector.
        #[arg(long)]
        cone: Option<String>,
    },
    /// Materialize a named dataset recipe from real and synthetic pair pools.
    BuildDataset {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        recipe: String,
        /// Pair manifest of real images.
        #[arg(long)]
        real: Option<PathBuf>,
        /// Pair manifest of synthetic images.
        #[arg(long)]
        synthetic: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated segmentation training on a dataset manifest.
    TrainSeg {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dice and heart-volume VS of a prediction, or of a checkpoint on a manifest.
    Evaluate {
        #[arg(long, requires = "gt")]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long, requires = "manifest", conflicts_with = "pred")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Aggregate fold CSVs (`model,structure,fold,dice`) into a table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        folds: Vec<PathBuf>,
        /// Write the aggregate rows here as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Every stage end to end.
    RunAll {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            1
        }
    }
}

fn parse_wavelet(spec: &str, threshold: &str) -> Result<WaveletSpec, PipelineError> {
    let bad = |m: String| PipelineError::Config(m);
    let (family, levels) = spec.split_once(':').unwrap_or((spec, "2"));
    let family: WaveletFamily = family.parse()?;
    let levels: usize = levels
        .parse()
        .map_err(|_| bad(format!("bad wavelet level count `{levels}`")))?;
    let (kind, value) = match threshold.split_once(':') {
        Some((k, v)) => (k, Some(v)),
        None => (threshold, None),
    };
    let t = match value {
        None => Threshold::Universal,
        Some(v) => Threshold::Fixed(
            v.parse()
                .map_err(|_| bad(format!("bad threshold value `{v}`")))?,
        ),
    };
    let rule = match kind {
        "hard" => ThresholdRule::Hard(t),
        "soft" => ThresholdRule::Soft(t),
        "none" => ThresholdRule::None,
        other => return Err(bad(format!("unknown threshold rule `{other}`"))),
    };
    Ok(WaveletSpec::new(family, levels, rule))
}

fn pair_manifest(
    name: &str,
    pairs: &[SourcePair],
    provenance: Provenance,
    dir: &Path,
) -> Result<DatasetManifest, PipelineError> {
    let entries = pairs
        .iter()
        .map(|p| {
            Ok(ManifestEntry {
                image_path: super::dataset::relative_to(&p.image, dir)?,
                label_path: super::dataset::relative_to(&p.labels, dir)?,
                provenance,
                postproc: PostprocFlags::default(),
            })
        })
        .collect::<Result<_, PipelineError>>()?;
    Ok(DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        name: name.to_string(),
        entries,
        created_from: String::new(),
    })
}

fn manifest_pairs(path: &Path) -> Result<Vec<SourcePair>, PipelineError> {
    let m = DatasetManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(m.entries
        .iter()
        .map(|e| SourcePair {
            image: resolve(base, &e.image_path),
            labels: resolve(base, &e.label_path),
        })
        .collect())
}

fn execute(cmd: Command) -> Result<(), PipelineError> {
    match cmd {
        Command::GenPhantoms {
            config,
            out,
            count,
            seed,
            render,
        } => {
            let cfg = config.load()?;
            let cone = ConeSpec::default_for(cfg.grid.dims, cfg.grid.spacing);
            let mut pairs = Vec::with_capacity(count);
            std::fs::create_dir_all(&out).map_err(|e| PipelineError::io(&out, e))?;
            for i in 0..count {
                let s = seed + i as u64;
                let params = HeartPhantomParams::sample(s);
                let labels = generate_phantom_labels(&params, cfg.grid.dims, cfg.grid.spacing)?;
                let pair = SourcePair {
                    image: out.join(format!("{i:03}_image.v3d")),
                    labels: out.join(format!("{i:03}_labels.v3d")),
                };
                save_volume(&VolumeData::Labels(labels.clone()), &pair.labels)?;
                write_file(
                    &out.join(format!("{i:03}_params.json")),
                    serde_json::to_string_pretty(&params)?.as_bytes(),
                )?;
                if render {
                    let image = render_pseudo_ultrasound(&labels, &cone, &cfg.render, s)?;
                    save_volume(&VolumeData::Intensity(image), &pair.image)?;
                }
                pairs.push(pair);
            }
            if render {
                pair_manifest("phantoms", &pairs, Provenance::Real, &out)?
                    .save(out.join("manifest.json"))?;
            }
            println!("wrote {count} phantoms to {}", out.display());
        }
        Command::Render {
            config,
            labels,
            out,
            seed,
        } => {
            let cfg = config.load()?;
            let labels = load_volume(&labels)?.into_labels()?;
            let cone = ConeSpec::default_for(labels.dims(), labels.spacing());
            let image = render_pseudo_ultrasound(&labels, &cone, &cfg.render, seed)?;
            save_volume(&VolumeData::Intensity(image), &out)?;
        }
        Command::TrainGan {
            config,
            pairs,
            out,
            epochs,
            seed,
        } => {
            let cfg = config.load()?;
            let mut tcfg = cfg.gan_training;
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            if let Some(s) = seed {
                tcfg.seed = s;
            }
            let base = pairs.parent().unwrap_or(Path::new("."));
            let data: Vec<TrainingPair> = DatasetManifest::load(&pairs)?
                .load_samples(base)?
                .into_iter()
                .map(|s| TrainingPair {
                    image: s.image,
                    labels: s.labels,
                })
                .collect();
            let (model, history) = train_gan(&data, &cfg.generator, &cfg.discriminator, &tcfg)?;
            model.to_checkpoint().save(out.join("gan.ckpt"))?;
            write_file(
                &out.join("gan_history.csv"),
                write_history_csv(&history).as_bytes(),
            )?;
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: loss_D {:.4} loss_G {:.4} l1 {:.4}",
                    last.epoch, last.loss_d, last.loss_g, last.l1_term
                );
            }
        }
        Command::Synth {
            checkpoint,
            labels,
            out,
        } => {
            let model = GanModel::from_checkpoint(&ModelCheckpoint::load(&checkpoint)?)?;
            let labels = load_volume(&labels)?.into_labels()?;
            let image = synthesize(&model.generator, &labels)?;
            save_volume(&VolumeData::Intensity(image), &out)?;
        }
        Command::Postprocess {
            input,
            out,
            wavelet,
            threshold,
            cone,
        } => {
            let image = load_volume(&input)?.into_intensity()?;
            let spec = match &wavelet {
                Some(w) => parse_wavelet(w, &threshold)?,
                None => WaveletSpec::default(),
            };
            let cone_spec = match cone.as_deref() {
                None | Some("none") => None,
                Some("default") => Some(ConeSpec::default_for(image.dims(), image.spacing())),
                Some(path) => Some(serde_json::from_str(
                    &std::fs::read_to_string(path)
                        .map_err(|e| PipelineError::io(Path::new(path), e))?,
                )?),
            };
            let flags = PostprocFlags {
                wavelet: wavelet.is_some(),
                cone: cone_spec.is_some(),
            };
            let cone_spec =
                cone_spec.unwrap_or_else(|| ConeSpec::default_for(image.dims(), image.spacing()));
            let result = postprocess(&image, flags, &spec, &cone_spec)?;
            save_volume(&VolumeData::Intensity(result), &out)?;
        }
        Command::BuildDataset {
            config,
            recipe,
            real,
            synthetic,
            out,
        } => {
            let cfg = config.load()?;
            let recipe = DatasetRecipe::named(&recipe)?;
            let sources = DatasetSources {
                real: real
                    .as_deref()
                    .map(manifest_pairs)
                    .transpose()?
                    .unwrap_or_default(),
                synthetic: synthetic
                    .as_deref()
                    .map(manifest_pairs)
                    .transpose()?
                    .unwrap_or_default(),
            };
            let m = build_dataset(&recipe, &sources, &cfg.postproc, &out, &cfg.hash())?;
            println!("{}: {} entries", m.name, m.entries.len());
        }
        Command::TrainSeg {
            config,
            manifest,
            out,
            model,
            epochs,
            folds,
            seed,
        } => {
            let cfg = config.load()?;
            let mut scfg = cfg.segmentation;
            if let Some(e) = epochs {
                scfg.epochs = e;
            }
            if let Some(f) = folds {
                scfg.folds = f;
            }
            if let Some(s) = seed {
                scfg.seed = s;
            }
            let m = DatasetManifest::load(&manifest)?;
            let base = manifest.parent().unwrap_or(Path::new("."));
            let samples = m.load_samples(base)?;
            let results = train_seg(&samples, &scfg)?;
            let name = model.unwrap_or_else(|| {
                DatasetRecipe {
                    name: m.name.clone(),
                    real: 0,
                    synthetic: 0,
                    postproc: PostprocFlags::default(),
                }
                .model_name()
            });
            for r in &results {
                r.checkpoint
                    .save(out.join(format!("fold{}.ckpt", r.fold_index + 1)))?;
            }
            let csv = fold_results_csv(&name, &results);
            write_file(&out.join("fold_results.csv"), csv.as_bytes())?;
            print!("{csv}");
            if let Some(b) = best_fold(&results) {
                println!("best fold: {}", b + 1);
            }
        }
        Command::Evaluate {
            pred,
            gt,
            checkpoint,
            manifest,
        } => {
            if let (Some(pred), Some(gt)) = (pred, gt) {
                let pred = load_volume(&pred)?.into_labels()?;
                let gt = load_volume(&gt)?.into_labels()?;
                let counts = gt.class_counts();
                let pcounts = pred.class_counts();
                for s in Structure::ALL {
                    let id = s.class_id() as usize;
                    if counts[id] + pcounts[id] > 0 {
                        println!("{s} Dice {:.3}", dice(&pred, &gt, s.class_id())?);
                    }
                }
                println!(
                    "Heart Volume VS {:.3}",
                    volume_similarity(&pred, &gt, &HEART_CLASSES)?
                );
            } else if let (Some(ckpt), Some(manifest)) = (checkpoint, manifest) {
                let model = SegModel::from_checkpoint(&ModelCheckpoint::load(&ckpt)?)?;
                // models/<name>/foldK.ckpt
                let name = ckpt
                    .parent()
                    .and_then(Path::file_name)
                    .map(|n| n.to_string_lossy().into_owned())
                    .filter(|n| !n.is_empty())
                    .unwrap_or_else(|| "model".into());
                let base = manifest.parent().unwrap_or(Path::new("."));
                let samples = DatasetManifest::load(&manifest)?.load_samples(base)?;
                let mut rows = Vec::new();
                let mut per_metric: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
                for (i, s) in samples.iter().enumerate() {
                    let pred = predict(&model, &s.image)?;
                    let sc = StructureScores::compute(i.to_string(), &pred, &s.labels)?;
                    for (st, d) in &sc.dice {
                        per_metric.entry(Metric::Dice(*st)).or_default().push(*d);
                    }
                    if let Some(vs) = sc.vs {
                        per_metric.entry(Metric::HeartVs).or_default().push(vs);
                    }
                }
                for (metric, v) in per_metric {
                    rows.push(AggregateRow::from_scores(name.as_str(), metric, &v)?);
                }
                print!("{}", report_tables(&rows, TableLayout::Test)?);
            } else {
                return Err(PipelineError::Config(
                    "evaluate needs --pred/--gt or --checkpoint/--manifest".into(),
                ));
            }
        }
        Command::Report { folds, csv } => {
            let mut scores: Vec<((String, Metric), Vec<f64>)> = Vec::new();
            for path in &folds {
                let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
                for (n, line) in text.lines().enumerate().skip(1) {
                    let cols: Vec<&str> = line.split(',').collect();
                    let bad = || {
                        PipelineError::Manifest(format!(
                            "{}:{}: expected model,structure,fold,dice",
                            path.display(),
                            n + 1
                        ))
                    };
                    if cols.len() != 4 {
                        return Err(bad());
                    }
                    let structure = Structure::ALL
                        .into_iter()
                        .find(|s| s.name() == cols[1])
                        .ok_or_else(bad)?;
                    let value: f64 = cols[3].parse().map_err(|_| bad())?;
                    let key = (cols[0].to_string(), Metric::Dice(structure));
                    match scores.iter_mut().find(|(k, _)| *k == key) {
                        Some((_, v)) => v.push(value),
                        None => scores.push((key, vec![value])),
                    }
                }
            }
            let rows = scores
                .into_iter()
                .map(|((model, metric), v)| AggregateRow::from_scores(model, metric, &v))
                .collect::<Result<Vec<_>, _>>()?;
            print!("{}", report_tables(&rows, TableLayout::Validation)?);
            if let Some(p) = csv {
                write_file(&p, aggregate_rows_csv(&rows).as_bytes())?;
            }
        }
        Command::RunAll { config, out, seed } => {
            let mut cfg = config.load()?;
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let bundle = run_experiment(&cfg)?;
            println!("validation (mean ± std over folds)");
            print!("{}", bundle.validation_table);
            println!("\ntest set (mean ± std over cases)");
            print!("{}", bundle.test_table);
            println!("\nreport written to {}", bundle.out_dir.display());
        }
    }
    Ok(())
}
