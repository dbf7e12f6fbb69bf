//! Parametric left-heart phantom: truncated-ellipsoid LV, myocardial shell,
//! and an LA ellipsoid beyond the LV base plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::volume::{LabelVolume, Structure, BACKGROUND};

/// Fraction of the LV long semi-axis at which the base plane cuts the
/// ellipsoid (local y, apex at −y).
const BASE_FRACTION: f64 = 0.5;

/// Rigid pose: Euler angles (radians, applied x then y then z) and a
/// translation in millimetres, both relative to the volume centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }
}

impl Pose {
    /// Row-major `Rz · Ry · Rx`.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation;
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        [
            [cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx],
            [sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx],
            [-sy, cy * sx, cy * cx],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeartPhantomParams {
    /// LV semi-axes (mm); the long axis is local y.
    pub lv_semi_axes: [f64; 3],
    pub myo_thickness: f64,
    pub la_semi_axes: [f64; 3],
    /// LA centre relative to the LV axis at the base plane (mm).
    pub la_offset: [f64; 3],
    pub pose: Pose,
    pub seed: u64,
}

impl Default for HeartPhantomParams {
    fn default() -> Self {
        Self {
            lv_semi_axes: [18.0, 30.0, 14.0],
            myo_thickness: 8.0,
            la_semi_axes: [15.0, 13.0, 12.0],
            la_offset: [0.0, 8.0, 0.0],
            pose: Pose::default(),
            seed: 0,
        }
    }
}

impl HeartPhantomParams {
    /// Default anatomy with seeded shape and pose variation: semi-axes
    /// ±10 %, wall thickness 8–9.5 mm, in-plane rotation ±10°, shifts of a
    /// few millimetres.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Self::default();
        let mut jitter = |v: f64| v * rng.gen_range(0.9..1.1);
        let lv_semi_axes = base.lv_semi_axes.map(&mut jitter);
        let la_semi_axes = base.la_semi_axes.map(&mut jitter);
        let myo_thickness = rng.gen_range(8.0..9.5);
        let la_offset = [
            rng.gen_range(-3.0..3.0),
            base.la_offset[1] * rng.gen_range(0.8..1.2),
            rng.gen_range(-2.0..2.0),
        ];
        let pose = Pose {
            rotation: [0.0, 0.0, rng.gen_range(-10f64..10.0).to_radians()],
            translation: [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
            ],
        };
        Self {
            lv_semi_axes,
            myo_thickness,
            la_semi_axes,
            la_offset,
            pose,
            seed,
        }
    }

    fn validate(&self, spacing: [f32; 3]) -> Result<(), PhantomError> {
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !positive(&self.lv_semi_axes) || !positive(&self.la_semi_axes) {
            return Err(PhantomError::InvalidParams(
                "semi-axes must be positive".into(),
            ));
        }
        let max_spacing = spacing.iter().cloned().fold(0.0f32, f32::max) as f64;
        if !(self.myo_thickness >= max_spacing) {
            return Err(PhantomError::InvalidParams(format!(
                "myocardial thickness {} mm is thinner than one voxel ({max_spacing} mm)",
                self.myo_thickness
            )));
        }
        Ok(())
    }

    fn base_y(&self) -> f64 {
        BASE_FRACTION * self.lv_semi_axes[1]
    }

    fn la_center(&self) -> [f64; 3] {
        [
            self.la_offset[0],
            self.base_y() + self.la_offset[1],
            self.la_offset[2],
        ]
    }

    /// Class of a point given in the phantom's local frame (mm).
    pub fn classify_local(&self, p: [f64; 3]) -> u8 {
        let base = self.base_y();
        let [ax, ay, az] = self.lv_semi_axes;
        let q = |c: [f64; 3], s: [f64; 3]| -> f64 {
            ((p[0] - c[0]) / s[0]).powi(2)
                + ((p[1] - c[1]) / s[1]).powi(2)
                + ((p[2] - c[2]) / s[2]).powi(2)
        };
        if p[1] <= base && q([0.0; 3], [ax, ay, az]) <= 1.0 {
            return Structure::Lv.class_id();
        }
        if p[1] > base && q(self.la_center(), self.la_semi_axes) <= 1.0 {
            return Structure::La.class_id();
        }
        let t = self.myo_thickness;
        if p[1] <= base + t && q([0.0; 3], [ax + t, ay + t, az + t]) <= 1.0 {
            return Structure::Myo.class_id();
        }
        BACKGROUND
    }
}

/// World-axis half extents of a rotated ellipsoid.
fn ellipsoid_extent(rot: &[[f64; 3]; 3], semi: [f64; 3]) -> [f64; 3] {
    let mut e = [0.0; 3];
    for (i, row) in rot.iter().enumerate() {
        e[i] = (0..3)
            .map(|j| (row[j] * semi[j]).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    e
}

fn rotate(rot: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2],
        rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2],
        rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2],
    ]
}

/// World coordinate (mm, relative to the volume centre) of a voxel centre.
pub fn voxel_world(dims: [usize; 3], spacing: [f32; 3], idx: [usize; 3]) -> [f64; 3] {
    [0, 1, 2].map(|a| (idx[a] as f64 - (dims[a] as f64 - 1.0) / 2.0) * spacing[a] as f64)
}

/// Rasterizes the posed phantom at voxel centres.
pub fn generate_phantom_labels(
    params: &HeartPhantomParams,
    dims: [usize; 3],
    spacing: [f32; 3],
) -> Result<LabelVolume, PhantomError> {
    params.validate(spacing)?;
    let rot = params.pose.matrix();
    let t = params.pose.translation;
    let half = [0, 1, 2].map(|a| dims[a] as f64 / 2.0 * spacing[a] as f64);

    // Every structure must stay inside the grid's physical extent.
    let myo = params.myo_thickness;
    let lv_outer = params.lv_semi_axes.map(|s| s + myo);
    let checks = [
        (Structure::Myo, [0.0; 3], lv_outer),
        (Structure::La, params.la_center(), params.la_semi_axes),
    ];
    for (structure, center, semi) in checks {
        let c = rotate(&rot, center);
        let ext = ellipsoid_extent(&rot, semi);
        for a in 0..3 {
            let lo = c[a] + t[a] - ext[a];
            let hi = c[a] + t[a] + ext[a];
            if lo < -half[a] || hi > half[a] {
                return Err(PhantomError::OutOfBounds { structure, axis: a });
            }
        }
    }

    let mut classes = Vec::with_capacity(dims.iter().product());
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let w = voxel_world(dims, spacing, [x, y, z]);
                let d = [w[0] - t[0], w[1] - t[1], w[2] - t[2]];
                // local = Rᵀ · (world − t)
                let local = [
                    rot[0][0] * d[0] + rot[1][0] * d[1] + rot[2][0] * d[2],
                    rot[0][1] * d[0] + rot[1][1] * d[1] + rot[2][1] * d[2],
                    rot[0][2] * d[0] + rot[1][2] * d[1] + rot[2][2] * d[2],
                ];
                classes.push(params.classify_local(local));
            }
        }
    }
    Ok(LabelVolume::new(dims, spacing, classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: [usize; 3] = [64, 64, 16];
    const SPACING: [f32; 3] = [2.0, 2.0, 4.0];

    #[test]
    fn default_phantom_has_all_structures() {
        let l = generate_phantom_labels(&HeartPhantomParams::default(), DIMS, SPACING).unwrap();
        let counts = l.class_counts();
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), l.len());
    }

    #[test]
    fn oversized_phantom_names_structure() {
        let params = HeartPhantomParams {
            la_offset: [0.0, 60.0, 0.0],
            ..Default::default()
        };
        let err = generate_phantom_labels(&params, DIMS, SPACING).unwrap_err();
        assert!(matches!(
            err,
            PhantomError::OutOfBounds {
                structure: Structure::La,
                axis: 1
            }
        ));
    }

    #[test]
    fn thin_wall_rejected() {
        let params = HeartPhantomParams {
            myo_thickness: 1.0,
            ..Default::default()
        };
        assert!(generate_phantom_labels(&params, DIMS, SPACING).is_err());
    }

    #[test]
    fn sampled_params_fit_working_grids() {
        for seed in 0..50 {
            let p = HeartPhantomParams::sample(seed);
            generate_phantom_labels(&p, DIMS, SPACING).unwrap();
            generate_phantom_labels(&p, [32, 32, 16], [4.0; 3]).unwrap();
            generate_phantom_labels(&p, [16, 16, 8], [8.0; 3]).unwrap();
        }
    }

    #[test]
    fn identity_pose_matrix() {
        let m = Pose::default().matrix();
        assert_eq!(m, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    }
}
