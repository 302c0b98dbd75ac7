//! Disparity transformation.
//!
//! Road disparities are modelled as `d = a0 + a1 (v cos θ − u sin θ)` where
//! θ is the stereo rig roll. The pipeline finds a coarse road region in the
//! v-disparity histogram, estimates θ by minimizing the least-squares
//! residual energy over the road samples, fits `(a0, a1)` at that θ, and
//! subtracts the fitted profile so the road becomes a near-constant plateau
//! at height `δ`.

mod pipeline;
mod roll;
mod transform;
mod vdisparity;

use thiserror::Error;

pub use pipeline::{run_dt_pipeline, sample_mask, DtOutput, MAX_SAMPLES};
pub use roll::{estimate_roll, fit_profile, roll_energy, ROLL_BOUND};
pub use transform::{delta_for_residual, inverse_transform, transform, Transformed};
pub use vdisparity::{build_v_disparity, coarse_road_mask, CoarseMask, Line, VDisparityMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DtError {
    #[error("disparity image has no valid pixels")]
    EmptyInput,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate fit: rotated row coordinate has no spread at theta = {theta} rad")]
    Degenerate { theta: f64 },
    #[error("no road found: best line explains {consensus} of {candidates} candidate rows")]
    NoRoadFound { consensus: usize, candidates: usize },
    #[error("image size mismatch: {0}")]
    SizeMismatch(String),
}

/// One road sample: pixel column, pixel row and disparity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DispSample {
    pub u: f64,
    pub v: f64,
    pub d: f64,
}

impl DispSample {
    pub fn new(u: f64, v: f64, d: f64) -> Self {
        DispSample { u, v, d }
    }
}

/// Fitted road: profile `(a0, a1)`, roll θ, offset δ, residual energy and
/// the number of samples behind the fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoadModel {
    pub a0: f64,
    pub a1: f64,
    pub theta: f64,
    pub delta: f64,
    pub energy: f64,
    pub inlier_count: usize,
}

impl RoadModel {
    /// The model that leaves disparities untouched.
    pub fn zero() -> Self {
        RoadModel {
            a0: 0.0,
            a1: 0.0,
            theta: 0.0,
            delta: 0.0,
            energy: 0.0,
            inlier_count: 0,
        }
    }

    #[inline]
    pub fn profile(&self, u: f64, v: f64) -> f64 {
        road_profile(self.a0, self.a1, self.theta, u, v)
    }
}

/// Road disparity at pixel `(u, v)`.
#[inline]
pub fn road_profile(a0: f64, a1: f64, theta: f64, u: f64, v: f64) -> f64 {
    a0 + a1 * (v * theta.cos() - u * theta.sin())
}
