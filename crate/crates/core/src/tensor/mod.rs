//! Dense real tensors and the small set of differentiable operations needed
//! by the fusion layers and the toy segmentation network.
//!
//! Layout is row-major with the channel axis innermost, so a feature map of
//! dims `[h, w, c]` stores element `(y, x, k)` at `(y * w + x) * c + k`.
//! Convolution kernels use dims `[kh, kw, c_in, c_out]`.

pub mod ops;
pub mod optim;
pub mod tape;

use thiserror::Error;

pub use optim::Sgd;
pub use tape::{Tape, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {message}")]
    InvalidShape { op: &'static str, message: String },
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { dims: Vec<usize>, len: usize },
    #[error("{op}: every pixel is ignored, nothing to average")]
    NoLabeledPixels { op: &'static str },
    #[error("backward called before any forward pass was recorded")]
    BackwardBeforeForward,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
}

/// Rank 1 to 4 tensor of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// A rank-3 `H×W×C` tensor used as an image-like feature.
pub type FeatureMap = Tensor;

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: &[usize], value: f64) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        if dims.is_empty() || dims.len() > 4 || dims.iter().product::<usize>() != data.len() {
            return Err(TensorError::LengthMismatch {
                dims: dims.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn3(h: usize, w: usize, c: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    data.push(f(y, x, k));
                }
            }
        }
        Tensor {
            dims: vec![h, w, c],
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Dims of a rank-3 tensor as `(h, w, c)`.
    pub fn hwc(&self) -> Result<(usize, usize, usize), TensorError> {
        match self.dims[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(TensorError::InvalidShape {
                op: "hwc",
                message: format!("expected rank 3, got dims {:?}", self.dims),
            }),
        }
    }

    #[inline]
    pub fn at3(&self, y: usize, x: usize, k: usize) -> f64 {
        let (w, c) = (self.dims[1], self.dims[2]);
        self.data[(y * w + x) * c + k]
    }

    #[inline]
    pub fn set3(&mut self, y: usize, x: usize, k: usize, value: f64) {
        let (w, c) = (self.dims[1], self.dims[2]);
        self.data[(y * w + x) * c + k] = value;
    }

    pub fn reshape(mut self, dims: &[usize]) -> Result<Self, TensorError> {
        if dims.iter().product::<usize>() != self.data.len() || dims.is_empty() || dims.len() > 4 {
            return Err(TensorError::LengthMismatch {
                dims: dims.to_vec(),
                len: self.data.len(),
            });
        }
        self.dims = dims.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same("add", other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.check_same("sub", other)?;
        Ok(Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Sum of elementwise products.
    pub fn dot(&self, other: &Tensor) -> Result<f64, TensorError> {
        self.check_same("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.dims, other.dims, "max_abs_diff on mismatched dims");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, op: &'static str, other: &Tensor) -> Result<(), TensorError> {
        if self.dims != other.dims {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: self.dims.clone(),
                got: other.dims.clone(),
            });
        }
        Ok(())
    }
}
