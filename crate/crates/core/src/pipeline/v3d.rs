//! `V3D1` volume files.
//!
//! Header (29 bytes): magic `V3D1`, dtype u8 (0 = f32, 1 = u8), dims as 3×u32
//! LE (x, y, z), spacing as 3×f32 LE. Payload: voxels x-fastest, LE.

use std::path::Path;

use thiserror::Error;

use crate::volume::{LabelVolume, Volume, VolumeError};

pub const MAGIC: &[u8; 4] = b"V3D1";
pub const HEADER_LEN: usize = 29;

const DTYPE_F32: u8 = 0;
const DTYPE_U8: u8 = 1;

#[derive(Debug, Error)]
pub enum VolumeFileError {
    #[error("not a V3D1 file (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("header needs {HEADER_LEN} bytes, file has {0}")]
    TruncatedHeader(usize),
    #[error("dims {dims:?} need {expected} payload bytes, file has {actual}")]
    TruncatedPayload {
        dims: [u32; 3],
        expected: usize,
        actual: usize,
    },
    #[error("dims {dims:?} need {expected} payload bytes, file has {actual} (trailing data)")]
    TrailingBytes {
        dims: [u32; 3],
        expected: usize,
        actual: usize,
    },
    #[error("expected a {expected} volume, file holds {found}")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid volume content: {0}")]
    Content(#[from] VolumeError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Either kind of volume a V3D file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Intensity(Volume),
    Labels(LabelVolume),
}

impl VolumeData {
    fn kind(&self) -> &'static str {
        match self {
            VolumeData::Intensity(_) => "f32",
            VolumeData::Labels(_) => "u8",
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        match self {
            VolumeData::Intensity(v) => v.dims(),
            VolumeData::Labels(l) => l.dims(),
        }
    }

    pub fn into_intensity(self) -> Result<Volume, VolumeFileError> {
        match self {
            VolumeData::Intensity(v) => Ok(v),
            other => Err(VolumeFileError::WrongKind {
                expected: "f32",
                found: other.kind(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<LabelVolume, VolumeFileError> {
        match self {
            VolumeData::Labels(l) => Ok(l),
            other => Err(VolumeFileError::WrongKind {
                expected: "u8",
                found: other.kind(),
            }),
        }
    }
}

impl From<Volume> for VolumeData {
    fn from(v: Volume) -> Self {
        VolumeData::Intensity(v)
    }
}

impl From<LabelVolume> for VolumeData {
    fn from(l: LabelVolume) -> Self {
        VolumeData::Labels(l)
    }
}

fn header(dtype: u8, dims: [usize; 3], spacing: [f32; 3], payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.push(dtype);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn encode(data: &VolumeData) -> Vec<u8> {
    match data {
        VolumeData::Intensity(v) => {
            let mut out = header(DTYPE_F32, v.dims(), v.spacing(), v.len() * 4);
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
            out
        }
        VolumeData::Labels(l) => {
            let mut out = header(DTYPE_U8, l.dims(), l.spacing(), l.len());
            out.extend_from_slice(l.classes());
            out
        }
    }
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

pub fn decode(bytes: &[u8]) -> Result<VolumeData, VolumeFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let mut m = [0u8; 4];
        let n = bytes.len().min(4);
        m[..n].copy_from_slice(&bytes[..n]);
        if bytes.len() < 4 {
            return Err(VolumeFileError::TruncatedHeader(bytes.len()));
        }
        return Err(VolumeFileError::BadMagic(m));
    }
    if bytes.len() < HEADER_LEN {
        return Err(VolumeFileError::TruncatedHeader(bytes.len()));
    }
    let dtype = bytes[4];
    let elem = match dtype {
        DTYPE_F32 => 4usize,
        DTYPE_U8 => 1,
        other => return Err(VolumeFileError::UnknownDtype(other)),
    };
    let raw_dims = [0, 1, 2].map(|i| le_u32(&bytes[5 + 4 * i..]));
    let spacing = [0, 1, 2].map(|i| f32::from_bits(le_u32(&bytes[17 + 4 * i..])));
    let payload = &bytes[HEADER_LEN..];
    let expected = raw_dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d as usize))
        .unwrap_or(usize::MAX);
    if payload.len() < expected {
        return Err(VolumeFileError::TruncatedPayload {
            dims: raw_dims,
            expected,
            actual: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(VolumeFileError::TrailingBytes {
            dims: raw_dims,
            expected,
            actual: payload.len(),
        });
    }
    let dims = raw_dims.map(|d| d as usize);
    Ok(match dtype {
        DTYPE_F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            VolumeData::Intensity(Volume::new(dims, spacing, data)?)
        }
        _ => VolumeData::Labels(LabelVolume::new(dims, spacing, payload.to_vec())?),
    })
}

pub fn save_volume(data: &VolumeData, path: impl AsRef<Path>) -> Result<(), VolumeFileError> {
    let path = path.as_ref();
    let io = |source| VolumeFileError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    std::fs::write(path, encode(data)).map_err(io)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<VolumeData, VolumeFileError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| VolumeFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}
