//! Image, tensor and parameter file formats.
//!
//! Every reader works on a byte slice first (`decode_*`) and the path-based
//! wrappers only add file access, so malformed input always surfaces as an
//! [`IoError`] instead of a panic.

mod pfm;
mod pnm;
mod text;
mod tnsr;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use pnm::{
    decode_labels, decode_pgm16, decode_ppm, encode_labels, encode_pgm16, encode_ppm, read_labels,
    read_pgm16, read_ppm, write_labels, write_pgm16, write_ppm,
};
pub use text::{
    parse_camera, parse_road_model, read_camera, read_road_model, render_camera, render_road_model,
    write_camera, write_road_model,
};
pub use tnsr::{decode_tensor, encode_tensor, read_tensor, write_tensor};

/// Fixed-point denominator for 16-bit disparity files.
pub const DEFAULT_DISPARITY_SCALE: f64 = 256.0;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("unsupported format: {0}")]
    Unsupported(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },
    #[error("value {value} at pixel ({x}, {y}) cannot be stored")]
    Range { x: usize, y: usize, value: f64 },
    #[error("NaN sample at index {0}")]
    NaN(usize),
    #[error("missing key `{0}`")]
    MissingKey(&'static str),
    #[error("key `{key}`: cannot parse `{value}` as a number")]
    BadValue { key: String, value: String },
    #[error("invalid data: {0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        IoError::Format {
            offset,
            message: message.into(),
        }
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    std::fs::write(path, bytes).map_err(|source| IoError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Dense disparity image with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
    scale: f64,
}

impl DisparityImage {
    /// Builds an image from row-major disparities and a validity mask.
    /// Invalid pixels are stored as 0.
    pub fn new(width: usize, height: usize, mut data: Vec<f64>, valid: Vec<bool>) -> Result<Self, IoError> {
        let n = width * height;
        if data.len() != n || valid.len() != n {
            return Err(IoError::Invalid(format!(
                "{width}x{height} image needs {n} samples, got {} values and {} mask entries",
                data.len(),
                valid.len()
            )));
        }
        for (i, (d, &ok)) in data.iter_mut().zip(&valid).enumerate() {
            if !ok {
                *d = 0.0;
            } else if !d.is_finite() || *d < 0.0 {
                return Err(IoError::Range {
                    x: i % width.max(1),
                    y: i / width.max(1),
                    value: *d,
                });
            }
        }
        Ok(DisparityImage {
            width,
            height,
            data,
            valid,
            scale: DEFAULT_DISPARITY_SCALE,
        })
    }

    /// All pixels valid.
    pub fn dense(width: usize, height: usize, data: Vec<f64>) -> Result<Self, IoError> {
        let valid = vec![true; data.len()];
        Self::new(width, height, data, valid)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Result<Self, IoError> {
        let mut data = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for v in 0..height {
            for u in 0..width {
                match f(u, v) {
                    Some(d) => {
                        data.push(d);
                        valid.push(true);
                    }
                    None => {
                        data.push(0.0);
                        valid.push(false);
                    }
                }
            }
        }
        Self::new(width, height, data, valid)
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> Option<f64> {
        let i = v * self.width + u;
        self.valid[i].then_some(self.data[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(u, v, disparity)` for every valid pixel in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter(|(_, (_, &ok))| ok)
            .map(move |(i, (&d, _))| (i % w, i / w, d))
    }
}

pub const LABEL_UNLABELED: u8 = 0;
pub const LABEL_DRIVABLE: u8 = 1;
pub const LABEL_ANOMALY: u8 = 2;

/// Per-pixel class labels: 0 unlabeled, 1 drivable area, 2 road anomaly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self, IoError> {
        if labels.len() != width * height {
            return Err(IoError::Invalid(format!(
                "{width}x{height} label image needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > LABEL_ANOMALY) {
            return Err(IoError::Invalid(format!("label {} at index {i} is not a known class", labels[i])));
        }
        Ok(LabelImage { width, height, labels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Rectified pinhole stereo camera.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    /// Stereo baseline in meters.
    pub baseline: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64, baseline: f64) -> Result<Self, IoError> {
        if !(fx > 0.0 && fy > 0.0 && baseline > 0.0) || !u0.is_finite() || !v0.is_finite() {
            return Err(IoError::Invalid(format!(
                "camera needs positive fx, fy and baseline (got fx={fx}, fy={fy}, baseline={baseline})"
            )));
        }
        Ok(CameraModel { fx, fy, u0, v0, baseline })
    }
}
