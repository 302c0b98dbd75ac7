//! `TNSR` tensor files: magic `TNSR`, then little-endian u32 version (1),
//! u32 rank, `rank` u32 dims, and the f32 payload in row-major order with
//! the channel axis innermost.

use std::path::Path;

use super::{read_bytes, write_bytes, IoError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;

fn u32_at(bytes: &[u8], offset: usize) -> Result<u32, IoError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| IoError::format(offset, "unexpected end of header"))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, IoError> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(IoError::format(0, "missing TNSR magic"));
    }
    let version = u32_at(bytes, 4)?;
    if version != VERSION {
        return Err(IoError::format(4, format!("unsupported TNSR version {version}")));
    }
    let rank = u32_at(bytes, 8)? as usize;
    if !(1..=4).contains(&rank) {
        return Err(IoError::format(8, format!("rank {rank} outside 1..=4")));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        dims.push(u32_at(bytes, 12 + 4 * i)? as usize);
    }
    let start = 12 + 4 * rank;
    let expected = dims
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IoError::format(12, "dims overflow"))?;
    let found = bytes.len() - start;
    if found != expected {
        return Err(IoError::Length { expected, found });
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    Tensor::from_vec(&dims, data).map_err(|e| IoError::Invalid(e.to_string()))
}

/// Samples are narrowed to f32; values already representable in f32
/// round-trip bit for bit.
pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>, IoError> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.rank() + 4 * tensor.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &d in tensor.dims() {
        let d = u32::try_from(d).map_err(|_| IoError::Invalid(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, IoError> {
    decode_tensor(&read_bytes(path.as_ref())?)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_tensor(tensor)?)
}
