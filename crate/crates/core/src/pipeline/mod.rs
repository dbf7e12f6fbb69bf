//! Persistence, dataset construction, experiment orchestration and the
//! command-line front end.

pub mod cli;
mod dataset;
mod experiment;
mod v3d;

use std::path::Path;

use thiserror::Error;

pub use dataset::{
    build_dataset, DatasetManifest, DatasetRecipe, DatasetSources, ManifestEntry, PostprocSettings,
    Provenance, RecipeRef, SourcePair, MANIFEST_SCHEMA_VERSION, RECIPE_NAMES,
};
pub use experiment::{
    run_experiment, write_pgm_mid_slice, Cohort, ExperimentConfig, Grid, ReportBundle,
    CONFIG_SCHEMA_VERSION, SEED_BLOCK,
};
pub use v3d::{
    decode, encode, load_volume, save_volume, VolumeData, VolumeFileError, HEADER_LEN, MAGIC,
};

use crate::checkpoint::CheckpointError;
use crate::gan3d::GanError;
use crate::metrics::MetricsError;
use crate::phantom::PhantomError;
use crate::postproc::PostprocError;
use crate::segmenter::SegError;
use crate::volume::VolumeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("unknown recipe `{name}`; valid recipes: {valid}")]
    UnknownRecipe { name: String, valid: String },
    #[error("recipe {recipe} needs {need} {kind} pairs, only {have} available")]
    MissingSources {
        recipe: String,
        kind: &'static str,
        need: usize,
        have: usize,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    VolumeFile(#[from] VolumeFileError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error(transparent)]
    Seg(#[from] SegError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Name of the failing stage, if the error came out of an experiment run.
    pub fn stage(&self) -> Option<&str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
