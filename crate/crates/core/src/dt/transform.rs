use super::RoadModel;
use crate::io::DisparityImage;

/// Residual magnitudes below this are treated as exact cancellation when
/// choosing δ.
const RESIDUAL_SNAP: f64 = 1e-9;

/// Offset that lifts every residual to at least 1: `ceil(max(0, −min) + 1)`.
pub fn delta_for_residual(min_residual: f64) -> f64 {
    let deficit = if min_residual > -RESIDUAL_SNAP { 0.0 } else { -min_residual };
    (deficit + 1.0).ceil()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transformed {
    pub image: DisparityImage,
    /// δ actually applied.
    pub delta: f64,
    /// True when the model's δ could not keep the output non-negative and a
    /// per-image δ was computed instead.
    pub delta_recomputed: bool,
}

/// Subtracts the fitted road profile and adds δ: `D_t = D_o − f(p) + δ`.
/// Invalid pixels stay invalid. If `model.delta` would leave a valid pixel
/// negative, δ is recomputed for this image and reported.
pub fn transform(d: &DisparityImage, model: &RoadModel) -> Transformed {
    let residuals: Vec<f64> = d
        .data()
        .iter()
        .zip(d.valid_mask())
        .enumerate()
        .map(|(i, (&x, &ok))| {
            if ok {
                let (u, v) = (i % d.width(), i / d.width());
                x - model.profile(u as f64, v as f64)
            } else {
                0.0
            }
        })
        .collect();
    let min = residuals
        .iter()
        .zip(d.valid_mask())
        .filter(|(_, &ok)| ok)
        .map(|(&r, _)| r)
        .fold(f64::INFINITY, f64::min);
    let (delta, delta_recomputed) = if min.is_finite() && min + model.delta < 0.0 {
        (delta_for_residual(min), true)
    } else {
        (model.delta, false)
    };
    let data = residuals
        .iter()
        .zip(d.valid_mask())
        .map(|(&r, &ok)| if ok { (r + delta).max(0.0) } else { 0.0 })
        .collect();
    let image = DisparityImage::new(d.width(), d.height(), data, d.valid_mask().to_vec())
        .expect("transform preserves image shape")
        .with_scale(d.scale());
    Transformed {
        image,
        delta,
        delta_recomputed,
    }
}

/// Undoes [`transform`]: `D_o = D_t + f(p) − δ`.
pub fn inverse_transform(t: &DisparityImage, model: &RoadModel, delta: f64) -> Vec<Option<f64>> {
    (0..t.height())
        .flat_map(|v| (0..t.width()).map(move |u| (u, v)))
        .map(|(u, v)| t.get(u, v).map(|x| x + model.profile(u as f64, v as f64) - delta))
        .collect()
}
