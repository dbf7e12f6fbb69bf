//! Anatomical label volumes and a deterministic pseudo-ultrasound renderer.
//!
//! The phantom replaces hand-annotated and CT-derived anatomy with a posed
//! parametric left heart. Labels can also be built from per-slice contours,
//! which is how externally drawn annotations enter the pipeline.

mod anatomy;
mod contour;
mod render;

use thiserror::Error;

pub use anatomy::{generate_phantom_labels, voxel_world, HeartPhantomParams, Pose};
pub use contour::{contours_to_label_volume, extract_contours, Contour, ContourSet};
pub(crate) use render::gaussian_smooth;
pub use render::{render_pseudo_ultrasound, RenderParams};

use crate::postproc::PostprocError;
use crate::volume::{Structure, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom parameters: {0}")]
    InvalidParams(String),
    #[error("{structure} does not fit inside the volume along axis {axis}")]
    OutOfBounds { structure: Structure, axis: usize },
    #[error("invalid contour: {0}")]
    InvalidContour(String),
    #[error("samples_per_contour ({samples}) is below the contour's point count ({points})")]
    TooFewSamples { samples: usize, points: usize },
    #[error("contour JSON: {0}")]
    Json(String),
    #[error("invalid render parameters: {0}")]
    InvalidRender(String),
    #[error(transparent)]
    Cone(#[from] PostprocError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}
