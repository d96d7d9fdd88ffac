//! `TVCLIP01` clip container.
//!
//! ```text
//! magic    "TVCLIP01"
//! channels u32 | frames u32 | height u32 | width u32   (little-endian)
//! dtype    u8   (0 = u8, 1 = f32)
//! payload  channel-major then frame-major: index ((c * T + t) * H + y) * W + x
//! crc32    u32 over every preceding byte
//! ```

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TVCLIP01";
const HEADER: usize = 8 + 16 + 1;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a clip file (bad magic bytes)")]
    BadMagic,
    #[error("clip checksum mismatch")]
    Crc,
    #[error("clip truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid clip: {0}")]
    Invalid(String),
}

pub type Result<T, E = ClipError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum ClipData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// A clip as stored: shape `(channels, T, H, W)` plus raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredClip {
    pub shape: [usize; 4],
    pub data: ClipData,
}

impl StoredClip {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let shape: [usize; 4] = t
            .shape()
            .try_into()
            .map_err(|_| ClipError::Invalid(format!("expected (3, T, H, W), got {:?}", t.shape())))?;
        let clip = Self {
            shape,
            data: ClipData::F32(t.data().to_vec()),
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn from_u8(shape: [usize; 4], data: Vec<u8>) -> Result<Self> {
        let clip = Self {
            shape,
            data: ClipData::U8(data),
        };
        clip.validate()?;
        Ok(clip)
    }

    fn validate(&self) -> Result<()> {
        if self.shape[0] != 3 || self.shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
            return Err(ClipError::Invalid(format!("bad shape {:?}", self.shape)));
        }
        let n: usize = self.shape.iter().product();
        match &self.data {
            ClipData::U8(d) if d.len() != n => Err(ClipError::Invalid("payload length".into())),
            ClipData::F32(d) if d.len() != n => Err(ClipError::Invalid("payload length".into())),
            ClipData::F32(d) if d.iter().any(|v| !(-1.0..=1.0).contains(v)) => {
                Err(ClipError::Invalid("f32 samples outside [-1, 1]".into()))
            }
            _ => Ok(()),
        }
    }

    /// Values as f32 in `[-1, 1]`; u8 samples map through `v / 127.5 - 1`.
    pub fn to_tensor(&self) -> Tensor {
        let data = match &self.data {
            ClipData::U8(d) => d.iter().map(|&v| normalize_u8(v)).collect(),
            ClipData::F32(d) => d.clone(),
        };
        Tensor::new(self.shape.to_vec(), data).expect("validated shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 + self.shape.iter().product::<usize>() * 4);
        out.extend_from_slice(MAGIC);
        for d in self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.data {
            ClipData::U8(d) => {
                out.push(0);
                out.extend_from_slice(d);
            }
            ClipData::F32(d) => {
                out.push(1);
                for v in d {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            if bytes.len() < 8 && MAGIC.starts_with(bytes) {
                return Err(ClipError::Truncated { expected: HEADER + 4, actual: bytes.len() });
            }
            return Err(ClipError::BadMagic);
        }
        if bytes.len() < HEADER {
            return Err(ClipError::Truncated { expected: HEADER + 4, actual: bytes.len() });
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
        let shape = [dim(0), dim(1), dim(2), dim(3)];
        let width = match bytes[HEADER - 1] {
            0 => 1,
            1 => 4,
            d => return Err(ClipError::Invalid(format!("unknown dtype {d}"))),
        };
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| ClipError::Invalid("shape overflows".into()))?;
        let expected = HEADER + n + 4;
        if bytes.len() < expected {
            return Err(ClipError::Truncated { expected, actual: bytes.len() });
        }
        if bytes.len() > expected {
            return Err(ClipError::Invalid("trailing bytes after checksum".into()));
        }
        let crc = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        if crc32fast::hash(&bytes[..expected - 4]) != crc {
            return Err(ClipError::Crc);
        }
        let payload = &bytes[HEADER..HEADER + n];
        let data = if width == 1 {
            ClipData::U8(payload.to_vec())
        } else {
            ClipData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        };
        let clip = Self { shape, data };
        clip.validate()?;
        Ok(clip)
    }
}

pub fn normalize_u8(v: u8) -> f32 {
    (v as f64 / 127.5 - 1.0) as f32
}

pub fn write_stored(path: &Path, clip: &StoredClip) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&clip.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn read_stored(path: &Path) -> Result<StoredClip> {
    StoredClip::from_bytes(&std::fs::read(path)?)
}

/// Writes a `(3, T, H, W)` f32 clip.
pub fn write_clip(path: &Path, clip: &Tensor) -> Result<()> {
    write_stored(path, &StoredClip::from_tensor(clip)?)
}

/// Reads a clip as f32 in `[-1, 1]` (u8 payloads are normalized).
pub fn read_clip(path: &Path) -> Result<Tensor> {
    Ok(read_stored(path)?.to_tensor())
}
