//! Ultrasound sector ("cone") masks.

use serde::{Deserialize, Serialize};

use super::PostprocError;
use crate::volume::Volume;

/// Sector geometry. `apex` is in voxel coordinates (x, y, z); depths are
/// radial distances from the apex in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub apex: [f64; 3],
    pub axis: [f64; 3],
    pub half_angle_lateral: f64,
    pub half_angle_elevation: f64,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Width of the inner linear ramp at the boundary, in voxels. Zero gives
    /// a binary mask.
    pub edge_softness: f64,
}

impl ConeSpec {
    /// Apical sector with its apex on the top face (y = 0), centred in x and
    /// z, opening along +y to the far face.
    pub fn default_for(dims: [usize; 3], spacing: [f32; 3]) -> Self {
        Self {
            apex: [
                (dims[0] as f64 - 1.0) / 2.0,
                0.0,
                (dims[2] as f64 - 1.0) / 2.0,
            ],
            axis: [0.0, 1.0, 0.0],
            half_angle_lateral: 40f64.to_radians(),
            half_angle_elevation: 35f64.to_radians(),
            depth_min: 0.0,
            depth_max: (dims[1] as f64 - 1.0) * spacing[1] as f64,
            edge_softness: 1.0,
        }
    }

    pub fn validate(&self, dims: [usize; 3]) -> Result<(), PostprocError> {
        let norm = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 1e-12) || !norm.is_finite() {
            return Err(PostprocError::DegenerateAxis);
        }
        let angle_ok = |a: f64| a > 0.0 && a < std::f64::consts::FRAC_PI_2;
        if !angle_ok(self.half_angle_lateral) || !angle_ok(self.half_angle_elevation) {
            return Err(PostprocError::InvalidCone(format!(
                "half angles must lie in (0, pi/2), got ({}, {})",
                self.half_angle_lateral, self.half_angle_elevation
            )));
        }
        if !(self.depth_min >= 0.0 && self.depth_min < self.depth_max) {
            return Err(PostprocError::InvalidCone(format!(
                "need 0 <= depth_min < depth_max, got [{}, {}]",
                self.depth_min, self.depth_max
            )));
        }
        if !(self.edge_softness >= 0.0) {
            return Err(PostprocError::InvalidCone(format!(
                "edge softness must be non-negative, got {}",
                self.edge_softness
            )));
        }
        for a in 0..3 {
            let lim = dims[a] as f64 - 0.5;
            if !(self.apex[a] >= -0.5 && self.apex[a] <= lim) {
                return Err(PostprocError::InvalidCone(format!(
                    "apex {:?} lies outside the volume {dims:?}",
                    self.apex
                )));
            }
        }
        Ok(())
    }

    /// Orthonormal frame (axis, lateral, elevation). Lateral is the x axis
    /// made orthogonal to the beam axis (y when the beam runs along x).
    fn frame(&self) -> [[f64; 3]; 3] {
        let norm = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        let a = self.axis.map(|v| v / norm);
        let reference = if a[0].abs() > 0.99 {
            [0.0, 1.0, 0.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        let dot = dot(reference, a);
        let l = [
            reference[0] - dot * a[0],
            reference[1] - dot * a[1],
            reference[2] - dot * a[2],
        ];
        let ln = dot3_norm(l);
        let l = l.map(|v| v / ln);
        let e = [
            a[1] * l[2] - a[2] * l[1],
            a[2] * l[0] - a[0] * l[2],
            a[0] * l[1] - a[1] * l[0],
        ];
        [a, l, e]
    }

    /// Signed distance-like margin (mm) to the sector boundary; positive
    /// inside.
    fn margin(&self, frame: &[[f64; 3]; 3], r: [f64; 3]) -> f64 {
        let range = dot3_norm(r);
        if range == 0.0 {
            return f64::NEG_INFINITY;
        }
        let along = dot(r, frame[0]);
        let lat = dot(r, frame[1]);
        let ele = dot(r, frame[2]);
        let lateral = (self.half_angle_lateral - lat.atan2(along).abs()) * along.hypot(lat);
        let elevation = (self.half_angle_elevation - ele.atan2(along).abs()) * along.hypot(ele);
        lateral
            .min(elevation)
            .min(range - self.depth_min)
            .min(self.depth_max - range)
    }

    /// Radial distance (mm) of voxel `(x, y, z)` from the apex.
    pub fn depth_mm(&self, spacing: [f32; 3], x: usize, y: usize, z: usize) -> f64 {
        dot3_norm(offset(self.apex, spacing, x, y, z))
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dot3_norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn offset(apex: [f64; 3], spacing: [f32; 3], x: usize, y: usize, z: usize) -> [f64; 3] {
    [
        (x as f64 - apex[0]) * spacing[0] as f64,
        (y as f64 - apex[1]) * spacing[1] as f64,
        (z as f64 - apex[2]) * spacing[2] as f64,
    ]
}

/// Mask in [0, 1]: 1 well inside the sector, 0 outside, with a linear ramp of
/// `edge_softness` voxels just inside the boundary.
pub fn make_cone_mask(
    dims: [usize; 3],
    spacing: [f32; 3],
    spec: &ConeSpec,
) -> Result<Volume, PostprocError> {
    spec.validate(dims)?;
    let frame = spec.frame();
    let voxel_mm = spacing.iter().cloned().fold(f32::INFINITY, f32::min) as f64;
    let mask = Volume::from_fn(dims, spacing, |x, y, z| {
        let m = spec.margin(&frame, offset(spec.apex, spacing, x, y, z)) / voxel_mm;
        if spec.edge_softness == 0.0 {
            if m >= 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (m / spec.edge_softness).clamp(0.0, 1.0) as f32
        }
    })?;
    Ok(mask)
}

/// `mask · vol + (1 − mask) · fill`.
pub fn apply_cone(vol: &Volume, mask: &Volume, fill: f32) -> Result<Volume, PostprocError> {
    vol.same_grid(mask)?;
    if !(0.0..=1.0).contains(&fill) {
        return Err(PostprocError::InvalidArgument(format!(
            "fill value must lie in [0, 1], got {fill}"
        )));
    }
    let data = vol
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| m * v + (1.0 - m) * fill)
        .collect();
    Ok(Volume::new(vol.dims(), vol.spacing(), data)?)
}
