use rand::Rng;

use super::{AugmentConfig, GanError};
use crate::phantom::gaussian_smooth;
use crate::volume::{LabelVolume, Volume, BACKGROUND};

/// Rotates both members about the depth (z) axis through the volume
/// centre, in physical coordinates. The image is resampled trilinearly
/// (z is unchanged, so this reduces to bilinear per slice) and labels by
/// nearest neighbour; samples from outside the grid are 0 / background.
pub fn rotate_pair(
    image: &Volume,
    labels: &LabelVolume,
    angle: f64,
) -> Result<(Volume, LabelVolume), GanError> {
    if image.dims() != labels.dims() {
        return Err(crate::volume::VolumeError::Mismatch(image.dims(), labels.dims()).into());
    }
    let [nx, ny, nz] = image.dims();
    let [sx, sy, _] = image.spacing().map(|s| s as f64);
    let (cx, cy) = ((nx as f64 - 1.0) / 2.0, (ny as f64 - 1.0) / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut img = Vec::with_capacity(image.len());
    let mut lab = Vec::with_capacity(image.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                // Inverse rotation: where did this output voxel come from?
                let (px, py) = ((x as f64 - cx) * sx, (y as f64 - cy) * sy);
                let qx = cos * px + sin * py;
                let qy = -sin * px + cos * py;
                let (fx, fy) = (qx / sx + cx, qy / sy + cy);

                let (rx, ry) = (fx.round(), fy.round());
                lab.push(
                    if rx >= 0.0 && ry >= 0.0 && (rx as usize) < nx && (ry as usize) < ny {
                        labels.get(rx as usize, ry as usize, z)
                    } else {
                        BACKGROUND
                    },
                );

                let (x0, y0) = (fx.floor(), fy.floor());
                let (tx, ty) = (fx - x0, fy - y0);
                let sample = |xi: f64, yi: f64| -> f64 {
                    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < nx && (yi as usize) < ny {
                        image.get(xi as usize, yi as usize, z) as f64
                    } else {
                        0.0
                    }
                };
                let mut v = 0.0;
                for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
                    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
                        let w = wx * wy;
                        if w != 0.0 {
                            v += w * sample(x0 + dx, y0 + dy);
                        }
                    }
                }
                img.push(v as f32);
            }
        }
    }
    Ok((
        Volume::new(image.dims(), image.spacing(), img)?,
        LabelVolume::new(labels.dims(), labels.spacing(), lab)?,
    ))
}

/// Isotropic Gaussian blur with `sigma` in voxels; zero returns a copy.
pub fn gaussian_blur(vol: &Volume, sigma: f32) -> Result<Volume, GanError> {
    if sigma <= 0.0 {
        return Ok(vol.clone());
    }
    let data: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    let out = gaussian_smooth(&data, vol.dims(), sigma);
    Ok(Volume::new(
        vol.dims(),
        vol.spacing(),
        out.into_iter().map(|v| v as f32).collect(),
    )?)
}

/// Random rotation (geometry shared by both members) and image-only blur,
/// each applied with probability `cfg.probability`. All four random draws
/// are taken every call so the stream stays aligned.
pub fn augment_pair<R: Rng + ?Sized>(
    image: &Volume,
    labels: &LabelVolume,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Volume, LabelVolume), GanError> {
    cfg.validate()?;
    let rotate = rng.gen::<f32>() < cfg.probability;
    let degrees = rng.gen_range(-1.0f64..=1.0) * cfg.rotation_degrees as f64;
    let blur = rng.gen::<f32>() < cfg.probability;
    let [lo, hi] = cfg.blur_sigma_range;
    let sigma = lo + rng.gen::<f32>() * (hi - lo);

    let (mut img, lab) = if rotate && degrees != 0.0 {
        rotate_pair(image, labels, degrees.to_radians())?
    } else {
        (image.clone(), labels.clone())
    };
    if blur {
        img = gaussian_blur(&img, sigma)?;
    }
    Ok((img, lab))
}
