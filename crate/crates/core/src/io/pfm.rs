//! Grayscale PFM. Rows are stored bottom-up; a negative scale line means
//! little-endian samples.

use std::path::Path;

use super::{read_bytes, write_bytes, IoError};
use crate::tensor::{FeatureMap, Tensor};

fn read_line(bytes: &[u8], pos: &mut usize) -> Result<(usize, String), IoError> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| IoError::format(start, "unterminated header line"))?;
    *pos = end + 1;
    let line = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| IoError::format(start, "header line is not ASCII"))?;
    Ok((start, line.trim().to_string()))
}

/// Decodes a single-channel PFM into an `H×W×1` map.
pub fn decode_pfm(bytes: &[u8]) -> Result<FeatureMap, IoError> {
    let mut pos = 0;
    let (_, magic) = read_line(bytes, &mut pos)?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(IoError::Unsupported("color PFM (PF) is not supported".into())),
        other => return Err(IoError::format(0, format!("bad PFM magic {other:?}"))),
    }
    let (dims_at, dims) = read_line(bytes, &mut pos)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let [w, h] = parts[..] else {
        return Err(IoError::format(dims_at, "expected `width height`"));
    };
    let width: usize = w
        .parse()
        .map_err(|_| IoError::format(dims_at, format!("bad width {w:?}")))?;
    let height: usize = h
        .parse()
        .map_err(|_| IoError::format(dims_at, format!("bad height {h:?}")))?;
    if width == 0 || height == 0 {
        return Err(IoError::format(dims_at, "zero image dimension"));
    }
    let (scale_at, scale_line) = read_line(bytes, &mut pos)?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| IoError::format(scale_at, format!("bad scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(IoError::format(scale_at, "scale must be finite and non-zero"));
    }
    let little_endian = scale < 0.0;

    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| IoError::format(dims_at, "image dimensions overflow"))?;
    let found = bytes.len() - pos;
    if found != expected {
        return Err(IoError::Length { expected, found });
    }
    let mut data = vec![0.0; width * height];
    for (i, chunk) in bytes[pos..].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let value = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (file_row, x) = (i / width, i % width);
        let y = height - 1 - file_row;
        data[y * width + x] = f64::from(value);
    }
    Tensor::from_vec(&[height, width, 1], data).map_err(|e| IoError::Invalid(e.to_string()))
}

/// Encodes an `H×W×1` map as little-endian PFM. Samples are narrowed to f32.
pub fn encode_pfm(map: &FeatureMap) -> Result<Vec<u8>, IoError> {
    let (h, w, c) = map.hwc().map_err(|e| IoError::Invalid(e.to_string()))?;
    if c != 1 {
        return Err(IoError::Unsupported(format!("PFM output needs one channel, map has {c}")));
    }
    if let Some(i) = map.data().iter().position(|v| v.is_nan()) {
        return Err(IoError::NaN(i));
    }
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.at3(y, x, 0) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<FeatureMap, IoError> {
    decode_pfm(&read_bytes(path.as_ref())?)
}

pub fn write_pfm(map: &FeatureMap, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_pfm(map)?)
}
