//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "PEFTFRG\0"
//! version  u32 LE
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes of UTF-8 JSON: {version, meta, tensors: [{name, shape, dtype, offset, nbytes, trainable}]}
//! payload  little-endian tensor data; offsets are relative to the payload start
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::tensor::{DType, Parameter, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PEFTFRG\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    nbytes: u64,
    trainable: bool,
}

#[derive(Debug, Clone)]
pub struct StoredTensor<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct CheckpointData<T> {
    /// Free-form description of the model the tensors belong to.
    pub meta: serde_json::Value,
    pub tensors: Vec<StoredTensor<T>>,
}

pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    meta: serde_json::Value,
    params: &[&Parameter<T>],
) -> Result<()> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(params.len());
    for p in params {
        let offset = payload.len() as u64;
        for &v in p.tensor.data() {
            v.write_le(&mut payload);
        }
        entries.push(Entry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            dtype: T::DTYPE,
            offset,
            nbytes: payload.len() as u64 - offset,
            trainable: p.trainable,
        });
    }
    let header = serde_json::to_vec(&Header {
        version: CHECKPOINT_VERSION,
        meta,
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint, converting tensors to `T` when stored in another precision.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<CheckpointData<T>> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| ForgeError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 {
        return Err(bad("truncated preamble"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "format version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| bad(&format!("malformed header: {e}")))?;
    if header.version != version {
        return Err(bad("header version disagrees with preamble"));
    }
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let width = e.dtype.size_of();
        let count: usize = e.shape.iter().product();
        if e.nbytes as usize != count * width {
            return Err(bad(&format!("tensor `{}` has inconsistent size", e.name)));
        }
        let start = e.offset as usize;
        let end = start
            .checked_add(e.nbytes as usize)
            .filter(|&end| end <= payload.len())
            .ok_or_else(|| bad(&format!("tensor `{}` is truncated", e.name)))?;
        let raw = &payload[start..end];
        let data: Vec<T> = match e.dtype {
            DType::F32 => raw.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        tensors.push(StoredTensor {
            tensor: Tensor::new(&e.shape, data)?,
            name: e.name,
            trainable: e.trainable,
        });
    }
    Ok(CheckpointData {
        meta: header.meta,
        tensors,
    })
}
