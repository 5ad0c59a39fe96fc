//! The `.grid` binary raster format.
//!
//! Layout: magic `GRD1`, little-endian `u32` width, `u32` height, one dtype
//! byte, then the row-major payload. Dtype 0 is `u32` counts and 1 is `f32`
//! reals; dtype 2 (`f64`) is used for checkpoint parameter blobs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRD1";
const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    Counts(Vec<u32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl GridData {
    pub fn dtype(&self) -> u8 {
        match self {
            GridData::Counts(_) => 0,
            GridData::F32(_) => 1,
            GridData::F64(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridData::Counts(v) => v.len(),
            GridData::F32(v) => v.len(),
            GridData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Widened copy of the payload.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            GridData::Counts(v) => v.iter().map(|&c| c as f64).collect(),
            GridData::F32(v) => v.iter().map(|&c| c as f64).collect(),
            GridData::F64(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub width: usize,
    pub height: usize,
    pub data: GridData,
}

impl RawGrid {
    pub fn new(width: usize, height: usize, data: GridData) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(format!(
                "grid payload has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(RawGrid {
            width,
            height,
            data,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.data.len();
        let mut out = Vec::with_capacity(HEADER_LEN + n * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.push(self.data.dtype());
        match &self.data {
            GridData::Counts(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            GridData::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            GridData::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    /// Decodes one grid from the front of `bytes`, returning it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8], origin: &Path) -> Result<(Self, usize)> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::format(origin, "missing GRD1 header"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let dtype = bytes[12];
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::format(origin, "grid extent overflows"))?;
        let elem = match dtype {
            0 | 1 => 4,
            2 => 8,
            t => return Err(Error::format(origin, format!("unknown dtype tag {t}"))),
        };
        let end = HEADER_LEN + n * elem;
        if bytes.len() < end {
            return Err(Error::format(origin, "truncated payload"));
        }
        let body = &bytes[HEADER_LEN..end];
        let data = match dtype {
            0 => GridData::Counts(
                body.chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            1 => GridData::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => GridData::F64(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok((
            RawGrid {
                width,
                height,
                data,
            },
            end,
        ))
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let (grid, used) = Self::decode_prefix(bytes, origin)?;
        if used != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after payload"));
        }
        Ok(grid)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so
/// readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
