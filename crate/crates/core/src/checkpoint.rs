//! Model checkpoints: an architecture config (JSON) plus named parameters.
//!
//! Binary layout, all integers u32 little-endian:
//! `"CKP1"`, config length, config JSON bytes, parameter count, then per
//! parameter: name length, name bytes, rank, extents, f32 LE payload.

use std::path::Path;

use thiserror::Error;

use crate::engine::{Param, Tensor};

const MAGIC: &[u8; 4] = b"CKP1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("checkpoint has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("checkpoint config: {0}")]
    Config(String),
    #[error("checkpoint parameter {name}: {reason}")]
    Param { name: String, reason: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: serde_json::Value,
    pub params: Vec<Param>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated(self.bytes.len()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("extent fits in u32")).to_le_bytes());
}

impl ModelCheckpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_vec(&self.config).expect("json value serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, config.len());
        out.extend_from_slice(&config);
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.tensor.shape().len());
            for &d in p.tensor.shape() {
                put_u32(&mut out, d);
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        r.pos = 4;
        let clen = r.u32()?;
        let config = serde_json::from_slice(r.take(clen)?)
            .map_err(|e| CheckpointError::Config(e.to_string()))?;
        let count = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..count {
            let nlen = r.u32()?;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|e| CheckpointError::Config(e.to_string()))?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Param {
                    name: name.clone(),
                    reason: "extent overflow".into(),
                })?;
            let payload = r.take(
                numel
                    .checked_mul(4)
                    .ok_or(CheckpointError::Truncated(bytes.len()))?,
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Param {
                name: name.clone(),
                reason: e.to_string(),
            })?;
            params.push(Param { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        ModelCheckpoint {
            config: serde_json::json!({"levels": 2, "name": "g"}),
            params: vec![
                Param {
                    name: "a.weight".into(),
                    tensor: Tensor::new(
                        vec![2, 3],
                        vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0],
                    )
                    .unwrap(),
                },
                Param {
                    name: "a.bias".into(),
                    tensor: Tensor::scalar(7.0),
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = ModelCheckpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(
            back.params[0].tensor.data()[5].to_bits(),
            (-0.0f32).to_bits()
        );
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            ModelCheckpoint::from_bytes(b"XXXX"),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            ModelCheckpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Truncated(_))
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            ModelCheckpoint::from_bytes(&longer),
            Err(CheckpointError::TrailingBytes(1))
        ));
    }
}
