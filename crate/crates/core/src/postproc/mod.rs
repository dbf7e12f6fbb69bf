//! Post-processing of synthesized volumes: wavelet denoising against
//! checkerboard texture, and re-masking with an analytic ultrasound sector
//! to replace the ragged sector edge a generator produces.
//!
//! Both steps touch intensities only; label volumes pass through unchanged.

mod cone;
mod wavelet;

use thiserror::Error;

pub use cone::{apply_cone, make_cone_mask, ConeSpec};
pub use wavelet::{
    dwt3d, idwt3d, threshold_details, universal_threshold, wavelet_denoise, wavelet_shrink, Band,
    Level, Threshold, ThresholdRule, WaveletFamily, WaveletPyramid, WaveletSpec,
};

use crate::volume::VolumeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("extent {extent} on axis {axis} is not divisible by 2^{levels} and periodic extension is disabled")]
    NotDivisible {
        axis: usize,
        extent: usize,
        levels: usize,
    },
    #[error("wavelet pyramid does not match spec: {0}")]
    SpecMismatch(String),
    #[error("cone axis must be a non-zero vector")]
    DegenerateAxis,
    #[error("invalid cone: {0}")]
    InvalidCone(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Which post-processing steps were applied to an image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PostprocFlags {
    pub wavelet: bool,
    pub cone: bool,
}

/// Applies the flagged steps in order: wavelet denoise, then cone re-mask
/// (fill 0).
pub fn postprocess(
    vol: &crate::volume::Volume,
    flags: PostprocFlags,
    wavelet: &WaveletSpec,
    cone: &ConeSpec,
) -> Result<crate::volume::Volume, PostprocError> {
    let mut out = vol.clone();
    if flags.wavelet {
        out = wavelet_denoise(&out, wavelet)?;
    }
    if flags.cone {
        let mask = make_cone_mask(out.dims(), out.spacing(), cone)?;
        out = apply_cone(&out, &mask, 0.0)?;
    }
    Ok(out)
}
