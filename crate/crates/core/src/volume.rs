//! Scalar and label volumes on a regular grid.
//!
//! Voxels are stored x-fastest: index = x + nx·(y + ny·z). That is also the
//! memory order of a `[1, 1, nz, ny, nx]` tensor, so conversions are copies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("volume extents must be positive, got {0:?}")]
    EmptyDims([usize; 3]),
    #[error("dims {dims:?} need {expected} voxels, got {actual}")]
    Length {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("voxel spacing must be positive and finite, got {0:?}")]
    Spacing([f32; 3]),
    #[error("class id {0} is outside 0..=3")]
    ClassId(u8),
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Mismatch([usize; 3], [usize; 3]),
}

/// Anatomical structures carried by a [`LabelVolume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Structure {
    #[serde(rename = "LV")]
    Lv,
    #[serde(rename = "LA")]
    La,
    #[serde(rename = "MYO")]
    Myo,
}

impl Structure {
    pub const ALL: [Structure; 3] = [Structure::Lv, Structure::La, Structure::Myo];

    pub fn class_id(self) -> u8 {
        match self {
            Structure::Lv => 1,
            Structure::La => 2,
            Structure::Myo => 3,
        }
    }

    pub fn from_class_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Structure::Lv),
            2 => Some(Structure::La),
            3 => Some(Structure::Myo),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Lv => "LV",
            Structure::La => "LA",
            Structure::Myo => "MYO",
        }
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const BACKGROUND: u8 = 0;
pub const NUM_CLASSES: usize = 4;

fn check_geometry(dims: [usize; 3], spacing: [f32; 3], len: usize) -> Result<(), VolumeError> {
    if dims.iter().any(|&d| d == 0) {
        return Err(VolumeError::EmptyDims(dims));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(VolumeError::Spacing(spacing));
    }
    let expected = dims.iter().product();
    if len != expected {
        return Err(VolumeError::Length {
            dims,
            expected,
            actual: len,
        });
    }
    Ok(())
}

/// Float intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f32; 3],
    data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], data: Vec<f32>) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, data.len())?;
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: f32) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, vec![value; dims.iter().product()])
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f32; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self, VolumeError> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// `[1, 1, nz, ny, nx]` tensor view (copied).
    pub fn to_tensor(&self) -> Tensor {
        let [nx, ny, nz] = self.dims;
        Tensor::new(vec![1, 1, nz, ny, nx], self.data.clone()).expect("consistent extents")
    }

    /// Stacks volumes of identical extents into `[N, 1, nz, ny, nx]`.
    pub fn batch_tensor(volumes: &[&Volume]) -> Result<Tensor, VolumeError> {
        let first = volumes.first().map(|v| v.dims).unwrap_or([1, 1, 1]);
        let mut data = Vec::with_capacity(volumes.len() * first.iter().product::<usize>());
        for v in volumes {
            if v.dims != first {
                return Err(VolumeError::Mismatch(first, v.dims));
            }
            data.extend_from_slice(&v.data);
        }
        let [nx, ny, nz] = first;
        Ok(Tensor::new(vec![volumes.len(), 1, nz, ny, nx], data).expect("consistent extents"))
    }

    pub fn same_grid(&self, other: &Volume) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::Mismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

/// Per-voxel class ids over {0 = background, 1 = LV, 2 = LA, 3 = MYO}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f32; 3],
    classes: Vec<u8>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], classes: Vec<u8>) -> Result<Self, VolumeError> {
        check_geometry(dims, spacing, classes.len())?;
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(VolumeError::ClassId(bad));
        }
        Ok(Self {
            dims,
            spacing,
            classes,
        })
    }

    pub fn background(dims: [usize; 3], spacing: [f32; 3]) -> Result<Self, VolumeError> {
        Self::new(dims, spacing, vec![BACKGROUND; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.classes[self.index(x, y, z)]
    }

    /// Voxel count per class id.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &c in &self.classes {
            counts[c as usize] += 1;
        }
        counts
    }

    /// Class ids mapped to evenly spaced intensities {0, 1/3, 2/3, 1}.
    pub fn to_intensity(&self) -> Volume {
        let scale = 1.0 / (NUM_CLASSES - 1) as f32;
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.classes.iter().map(|&c| c as f32 * scale).collect(),
        }
    }

    pub fn mask(&self, class_id: u8) -> Vec<bool> {
        self.classes.iter().map(|&c| c == class_id).collect()
    }

    pub fn same_grid(&self, other: &LabelVolume) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::Mismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_x_fastest() {
        let v =
            Volume::from_fn([3, 2, 2], [1.0; 3], |x, y, z| (x + 10 * y + 100 * z) as f32).unwrap();
        assert_eq!(v.data()[1], 1.0);
        assert_eq!(v.data()[3], 10.0);
        assert_eq!(v.data()[6], 100.0);
        assert_eq!(v.get(2, 1, 1), 112.0);
        assert_eq!(v.to_tensor().shape(), &[1, 1, 2, 2, 3]);
    }

    #[test]
    fn label_ids_validated() {
        assert_eq!(
            LabelVolume::new([1, 1, 2], [1.0; 3], vec![0, 4]).unwrap_err(),
            VolumeError::ClassId(4)
        );
        let l = LabelVolume::new([2, 2, 1], [1.0; 3], vec![0, 1, 2, 3]).unwrap();
        assert_eq!(l.class_counts(), [1, 1, 1, 1]);
        let i = l.to_intensity();
        assert!((i.data()[2] - 2.0 / 3.0).abs() < 1e-7);
        assert_eq!(i.data()[3], 1.0);
    }

    #[test]
    fn geometry_validated() {
        assert!(Volume::new([0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::new([1, 1, 1], [0.0, 1.0, 1.0], vec![0.0]).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], vec![0.0]).is_err());
    }
}
