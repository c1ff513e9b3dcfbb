//! A minimal binary tensor container used for dumping kernels, augmented
//! batches, and model parameters.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   4 bytes  "OCTM"
//! version u32      currently 1
//! dtype   u8       1 = f32, 2 = f64
//! ndim    u8
//! dims    ndim x u64
//! payload product(dims) * dtype size, row-major
//! ```
//!
//! Readers reject wrong magic, unknown versions/dtypes, payload length
//! mismatches, and trailing bytes.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCTM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::F64),
            other => Err(Error::InvalidContainer(format!("unknown dtype code {other}"))),
        }
    }

    fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Encodes an f64 tensor (row-major) at the requested precision.
pub fn encode(tensor: &ArrayD<f64>, dtype: DType) -> Vec<u8> {
    let dims = tensor.shape();
    let mut out = Vec::with_capacity(4 + 4 + 2 + dims.len() * 8 + tensor.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => {
            for &v in tensor.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in tensor.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Decodes a container produced by [`encode`]; f32 payloads widen to f64.
pub fn decode(bytes: &[u8]) -> Result<ArrayD<f64>> {
    let fail = |msg: &str| Error::InvalidContainer(msg.to_string());
    if bytes.len() < 10 {
        return Err(fail("truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::InvalidContainer(format!(
            "unsupported version {version}"
        )));
    }
    let dtype = DType::from_code(bytes[8])?;
    let ndim = bytes[9] as usize;
    let dims_end = 10 + ndim * 8;
    if bytes.len() < dims_end {
        return Err(fail("truncated dims"));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let start = 10 + i * 8;
        dims.push(u64::from_le_bytes(bytes[start..start + 8].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| fail("dimension overflow"))?;
    if payload.len() < expected {
        return Err(Error::InvalidContainer(format!(
            "payload too short: {} < {expected}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::InvalidContainer(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }
    let values: Vec<f64> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    ArrayD::from_shape_vec(IxDyn(&dims), values)
        .map_err(|e| Error::InvalidContainer(format!("shape error: {e}")))
}

pub fn write_tensor(path: &Path, tensor: &ArrayD<f64>, dtype: DType) -> Result<()> {
    fs::write(path, encode(tensor, dtype))?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}
