//! Pseudo-ultrasound oracle: class means, multiplicative log-normal speckle,
//! depth attenuation and a sector mask. Not a physics simulator; it gives
//! the generator a learnable, deterministic label-to-image mapping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::postproc::{make_cone_mask, ConeSpec};
use crate::volume::{LabelVolume, Volume, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderParams {
    /// Mean intensity per class id (background, LV, LA, MYO).
    pub class_means: [f32; NUM_CLASSES],
    /// Standard deviation of the log speckle field.
    pub speckle_sigma: f32,
    /// Gaussian correlation length of the speckle field, in voxels. Zero
    /// gives white speckle.
    pub correlation_length: f32,
    /// Attenuation coefficient per millimetre of depth from the apex.
    pub attenuation: f32,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            class_means: [0.3, 0.15, 0.15, 0.7],
            speckle_sigma: 0.4,
            correlation_length: 2.0,
            attenuation: 0.004,
        }
    }
}

impl RenderParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.class_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(PhantomError::InvalidRender(format!(
                "class means must lie in [0, 1], got {:?}",
                self.class_means
            )));
        }
        let ok = |v: f32| v.is_finite() && v >= 0.0;
        if !ok(self.speckle_sigma) || !ok(self.correlation_length) || !ok(self.attenuation) {
            return Err(PhantomError::InvalidRender(
                "speckle sigma, correlation length and attenuation must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let s2 = 2.0 * (sigma as f64).powi(2);
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / s2).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable convolution along `axis` with edge clamping.
fn smooth_axis(data: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    if kernel.len() == 1 {
        return data.to_vec();
    }
    let r = (kernel.len() / 2) as i64;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as i64;
    let mut out = vec![0.0; data.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let pos = ((i / stride) % dims[axis]) as i64;
        let base = i as i64 - pos * stride as i64;
        let mut acc = 0.0;
        for (k, w) in kernel.iter().enumerate() {
            let p = (pos + k as i64 - r).clamp(0, n - 1);
            acc += w * data[(base + p * stride as i64) as usize];
        }
        *o = acc;
    }
    out
}

/// Separable Gaussian smoothing (sigma in voxels) with edge clamping.
pub(crate) fn gaussian_smooth(data: &[f64], dims: [usize; 3], sigma: f32) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let mut out = data.to_vec();
    for axis in 0..3 {
        out = smooth_axis(&out, dims, axis, &kernel);
    }
    out
}

/// Unit-variance Gaussian random field with Gaussian correlation.
fn speckle_field(dims: [usize; 3], correlation: f32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = dims.iter().product();
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut field = gaussian_smooth(&white, dims, correlation);
    let kernel = gaussian_kernel(correlation);
    // Interior variance of white noise after the separable filter.
    let per_axis: f64 = kernel.iter().map(|w| w * w).sum();
    let scale = 1.0 / per_axis.powi(3).sqrt();
    field.iter_mut().for_each(|v| *v *= scale);
    field
}

/// Renders a label volume into a pseudo-ultrasound image in [0, 1]:
/// `mean(class) · exp(σ·g − σ²/2) · exp(−μ·depth) · cone`, clamped. `g` is a
/// correlated Gaussian field drawn from `seed`.
pub fn render_pseudo_ultrasound(
    labels: &LabelVolume,
    cone: &ConeSpec,
    render: &RenderParams,
    seed: u64,
) -> Result<Volume, PhantomError> {
    render.validate()?;
    let dims = labels.dims();
    let spacing = labels.spacing();
    let mask = make_cone_mask(dims, spacing, cone)?;
    let g = speckle_field(dims, render.correlation_length, seed);
    let sigma = render.speckle_sigma as f64;
    let mu = render.attenuation as f64;
    let mut data = Vec::with_capacity(labels.len());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = labels.index(x, y, z);
                let m = mask.data()[i] as f64;
                if m == 0.0 {
                    data.push(0.0);
                    continue;
                }
                let mean = render.class_means[labels.classes()[i] as usize] as f64;
                let speckle = (sigma * g[i] - 0.5 * sigma * sigma).exp();
                let atten = (-mu * cone.depth_mm(spacing, x, y, z)).exp();
                data.push((mean * speckle * atten * m).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Ok(Volume::new(dims, spacing, data)?)
}
