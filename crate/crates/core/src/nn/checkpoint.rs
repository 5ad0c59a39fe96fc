//! Versioned model checkpoints.
//!
//! Layout: `GSCK`, u32 LE format version, u32 LE header length, the JSON
//! header, then one `.grid` blob per parameter in store order (width = element
//! count, height 1, dtype of the scalar type).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::grid::{write_atomic, GridData, RawGrid};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Model description, opaque at this level.
    pub model: serde_json::Value,
    pub seed: u64,
    pub step: u64,
    pub dtype: u8,
    pub params: Vec<ParamMeta>,
}

fn blob<T: Scalar>(t: &Tensor<T>) -> Result<RawGrid> {
    let data = match T::DTYPE {
        1 => GridData::F32(t.data.iter().map(|v| v.f64() as f32).collect()),
        _ => GridData::F64(t.data.iter().map(|v| v.f64()).collect()),
    };
    RawGrid::new(t.len().max(1), usize::from(!t.is_empty()), data)
}

pub fn encode_checkpoint<T: Scalar>(
    model: serde_json::Value,
    seed: u64,
    step: u64,
    params: &ParamStore<T>,
) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        model,
        seed,
        step,
        dtype: T::DTYPE,
        params: params
            .iter()
            .map(|(_, name, t)| ParamMeta {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + params.count() * T::BYTES);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in params.iter() {
        out.extend_from_slice(&blob(t)?.encode());
    }
    Ok(out)
}

fn parse_header(bytes: &[u8], origin: &Path) -> Result<(CheckpointHeader, usize)> {
    let bad = |reason: &str| Error::format(origin, reason);
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| bad("truncated header"))?;
    Ok((serde_json::from_slice(json)?, 12 + len))
}

/// Reads only the header, e.g. to pick the scalar type before loading.
pub fn read_checkpoint_header(path: &Path) -> Result<CheckpointHeader> {
    use std::io::Read;
    let mut f = std::fs::File::open(path)?;
    let mut head = [0u8; 12];
    f.read_exact(&mut head)
        .map_err(|_| Error::format(path, "truncated header"))?;
    if &head[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint (bad magic)"));
    }
    let len = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut bytes = head.to_vec();
    bytes.resize(12 + len, 0);
    f.read_exact(&mut bytes[12..])
        .map_err(|_| Error::format(path, "truncated header"))?;
    Ok(parse_header(&bytes, path)?.0)
}

/// Parses a checkpoint into its header and a parameter store of type `T`.
/// Blobs stored at another precision are converted.
pub fn decode_checkpoint<T: Scalar>(
    bytes: &[u8],
    origin: &Path,
) -> Result<(CheckpointHeader, ParamStore<T>)> {
    let bad = |reason: &str| Error::format(origin, reason);
    let (header, mut pos) = parse_header(bytes, origin)?;
    let mut store = ParamStore::new();
    for meta in &header.params {
        let (grid, used) = RawGrid::decode_prefix(&bytes[pos..], origin)?;
        pos += used;
        let n: usize = meta.shape.iter().product();
        let values = grid.data.to_f64();
        let values = if n == 0 { Vec::new() } else { values };
        if values.len() != n {
            return Err(bad(&format!(
                "parameter {} expects {n} values, blob has {}",
                meta.name,
                values.len()
            )));
        }
        let data = values.into_iter().map(T::of).collect();
        store.push(meta.name.clone(), Tensor::new(&meta.shape, data)?);
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after last parameter"));
    }
    Ok((header, store))
}

pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: serde_json::Value,
    seed: u64,
    step: u64,
    params: &ParamStore<T>,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model, seed, step, params)?)
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(CheckpointHeader, ParamStore<T>)> {
    decode_checkpoint(&std::fs::read(path)?, path)
}
