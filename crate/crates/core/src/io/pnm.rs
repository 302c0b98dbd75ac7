//! Binary netpbm: 16-bit PGM for disparities, 8-bit PGM for labels and PPM
//! for RGB proxies.

use std::path::Path;

use super::{read_bytes, write_bytes, DisparityImage, IoError, LabelImage, RgbImage, LABEL_ANOMALY};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn is_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Reads the next decimal header token, skipping whitespace and `#` comments.
fn next_number(bytes: &[u8], pos: &mut usize) -> Result<u64, IoError> {
    loop {
        match bytes.get(*pos) {
            None => return Err(IoError::format(*pos, "unexpected end of header")),
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' || b == b'\r' {
                        break;
                    }
                }
            }
            Some(&b) if is_space(b) => *pos += 1,
            Some(_) => break,
        }
    }
    let start = *pos;
    let mut value: u64 = 0;
    while let Some(&b) = bytes.get(*pos) {
        if !b.is_ascii_digit() {
            break;
        }
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add(u64::from(b - b'0')))
            .ok_or_else(|| IoError::format(start, "header number overflows"))?;
        *pos += 1;
    }
    if *pos == start {
        return Err(IoError::format(start, "expected a decimal number"));
    }
    Ok(value)
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header, IoError> {
    if bytes.len() < 2 {
        return Err(IoError::format(0, "file too short for a netpbm magic number"));
    }
    if &bytes[..2] != magic {
        return Err(IoError::format(
            0,
            format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(&bytes[..2])
            ),
        ));
    }
    let mut pos = 2;
    let dims_at = pos;
    let width = next_number(bytes, &mut pos)?;
    let height = next_number(bytes, &mut pos)?;
    let maxval_at = pos;
    let maxval = next_number(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(IoError::format(dims_at, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(IoError::format(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    match bytes.get(pos) {
        Some(&b) if is_space(b) => pos += 1,
        _ => return Err(IoError::format(pos, "expected a single whitespace byte after maxval")),
    }
    let width = usize::try_from(width).map_err(|_| IoError::format(dims_at, "width too large"))?;
    let height = usize::try_from(height).map_err(|_| IoError::format(dims_at, "height too large"))?;
    Ok(Header {
        width,
        height,
        maxval: maxval as u32,
        data_offset: pos,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, bytes_per_pixel: usize) -> Result<&'a [u8], IoError> {
    let expected = header
        .width
        .checked_mul(header.height)
        .and_then(|n| n.checked_mul(bytes_per_pixel))
        .ok_or_else(|| IoError::format(2, "image dimensions overflow"))?;
    let found = bytes.len() - header.data_offset;
    if found < expected {
        return Err(IoError::format(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, found {found}"),
        ));
    }
    Ok(&bytes[header.data_offset..header.data_offset + expected])
}

/// Decodes a 16-bit binary PGM into disparities using the default
/// fixed-point scale. Sample 0 marks an invalid pixel.
pub fn decode_pgm16(bytes: &[u8]) -> Result<DisparityImage, IoError> {
    decode_pgm16_scaled(bytes, super::DEFAULT_DISPARITY_SCALE)
}

pub(crate) fn decode_pgm16_scaled(bytes: &[u8], scale: f64) -> Result<DisparityImage, IoError> {
    let header = parse_header(bytes, b"P5")?;
    if header.maxval != 65535 {
        return Err(IoError::format(
            header.data_offset.saturating_sub(1),
            format!("disparity PGM must have maxval 65535, found {}", header.maxval),
        ));
    }
    let raw = payload(bytes, &header, 2)?;
    let mut data = Vec::with_capacity(header.width * header.height);
    let mut valid = Vec::with_capacity(header.width * header.height);
    for pair in raw.chunks_exact(2) {
        let sample = u16::from_be_bytes([pair[0], pair[1]]);
        valid.push(sample != 0);
        data.push(f64::from(sample) / scale);
    }
    Ok(DisparityImage::new(header.width, header.height, data, valid)?.with_scale(scale))
}

pub fn encode_pgm16(img: &DisparityImage) -> Result<Vec<u8>, IoError> {
    let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
    let mut out = Vec::with_capacity(header.len() + 2 * img.data().len());
    out.extend_from_slice(header.as_bytes());
    for (i, (&d, &ok)) in img.data().iter().zip(img.valid_mask()).enumerate() {
        let sample = if ok {
            let q = (d * img.scale()).round();
            if !(0.0..=65535.0).contains(&q) {
                return Err(IoError::Range {
                    x: i % img.width(),
                    y: i / img.width(),
                    value: d,
                });
            }
            q as u16
        } else {
            0
        };
        out.extend_from_slice(&sample.to_be_bytes());
    }
    Ok(out)
}

pub fn read_pgm16(path: impl AsRef<Path>) -> Result<DisparityImage, IoError> {
    decode_pgm16(&read_bytes(path.as_ref())?)
}

pub fn write_pgm16(img: &DisparityImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_pgm16(img)?)
}

/// Labels are stored as an 8-bit PGM holding the class index per pixel.
pub fn decode_labels(bytes: &[u8]) -> Result<LabelImage, IoError> {
    let header = parse_header(bytes, b"P5")?;
    if header.maxval > 255 {
        return Err(IoError::format(
            header.data_offset.saturating_sub(1),
            format!("label PGM must be 8-bit, found maxval {}", header.maxval),
        ));
    }
    let raw = payload(bytes, &header, 1)?;
    if let Some(i) = raw.iter().position(|&l| l > LABEL_ANOMALY) {
        return Err(IoError::format(header.data_offset + i, format!("unknown class label {}", raw[i])));
    }
    LabelImage::new(header.width, header.height, raw.to_vec())
}

pub fn encode_labels(labels: &LabelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelImage, IoError> {
    decode_labels(&read_bytes(path.as_ref())?)
}

pub fn write_labels(labels: &LabelImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_labels(labels))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, IoError> {
    let header = parse_header(bytes, b"P6")?;
    if header.maxval != 255 {
        return Err(IoError::format(
            header.data_offset.saturating_sub(1),
            format!("only 8-bit PPM is supported, found maxval {}", header.maxval),
        ));
    }
    let raw = payload(bytes, &header, 3)?;
    Ok(RgbImage {
        width: header.width,
        height: header.height,
        data: raw.to_vec(),
    })
}

pub fn encode_ppm(img: &RgbImage) -> Result<Vec<u8>, IoError> {
    if img.data.len() != img.width * img.height * 3 {
        return Err(IoError::Invalid(format!(
            "{}x{} RGB image needs {} bytes, got {}",
            img.width,
            img.height,
            img.width * img.height * 3,
            img.data.len()
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage, IoError> {
    decode_ppm(&read_bytes(path.as_ref())?)
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), &encode_ppm(img)?)
}
