use super::{DispSample, DtError};

/// Roll search bound, ±30°.
pub const ROLL_BOUND: f64 = 30.0 * std::f64::consts::PI / 180.0;

const GRID_POINTS: usize = 61;
const GOLDEN_TOL: f64 = 1e-10;

/// Centered second moments of the rotated row coordinate `x = v cos θ − u sin θ`
/// against disparity.
struct Moments {
    mean_x: f64,
    mean_d: f64,
    sxx: f64,
    sxd: f64,
    sdd: f64,
}

fn moments(samples: &[DispSample], theta: f64) -> Result<Moments, DtError> {
    if samples.len() < 3 {
        return Err(DtError::TooFewSamples {
            needed: 3,
            got: samples.len(),
        });
    }
    let (s, c) = theta.sin_cos();
    let n = samples.len() as f64;
    let rotated = |p: &DispSample| p.v * c - p.u * s;
    let mean_x = samples.iter().map(rotated).sum::<f64>() / n;
    let mean_d = samples.iter().map(|p| p.d).sum::<f64>() / n;
    let (mut sxx, mut sxd, mut sdd, mut scale) = (0.0, 0.0, 0.0, 0.0f64);
    for p in samples {
        let x = rotated(p);
        let dx = x - mean_x;
        let dd = p.d - mean_d;
        sxx += dx * dx;
        sxd += dx * dd;
        sdd += dd * dd;
        scale = scale.max(x.abs());
    }
    if !(sxx > 1e-12 * n * scale.max(1.0).powi(2)) {
        return Err(DtError::Degenerate { theta });
    }
    Ok(Moments {
        mean_x,
        mean_d,
        sxx,
        sxd,
        sdd,
    })
}

/// Residual energy `E(θ) = dᵀd − dᵀT(TᵀT)⁻¹Tᵀd` with `T = [1, v cos θ − u sin θ]`.
///
/// Evaluated in centered form, `Σ(d−d̄)² − (Σ(x−x̄)(d−d̄))² / Σ(x−x̄)²`, which is the
/// same projection residual without the cancellation of the raw form.
pub fn roll_energy(samples: &[DispSample], theta: f64) -> Result<f64, DtError> {
    let m = moments(samples, theta)?;
    Ok((m.sdd - m.sxd * m.sxd / m.sxx).max(0.0))
}

/// Least-squares road profile `(a0, a1)` at roll `theta`.
pub fn fit_profile(samples: &[DispSample], theta: f64) -> Result<(f64, f64), DtError> {
    let m = moments(samples, theta)?;
    let a1 = m.sxd / m.sxx;
    Ok((m.mean_d - a1 * m.mean_x, a1))
}

/// Minimizes `E(θ)` over ±30°: a 61-point grid, then golden-section search
/// within one grid step of the best point down to 1e-10 rad.
///
/// Grid points where the fit is degenerate are skipped; the error is only
/// returned when every point is degenerate.
pub fn estimate_roll(samples: &[DispSample]) -> Result<(f64, f64), DtError> {
    let step = 2.0 * ROLL_BOUND / (GRID_POINTS - 1) as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut last_err = None;
    for i in 0..GRID_POINTS {
        let theta = -ROLL_BOUND + step * i as f64;
        match roll_energy(samples, theta) {
            Ok(e) => {
                if best.is_none_or(|(_, be)| e < be) {
                    best = Some((theta, e));
                }
            }
            Err(e @ DtError::TooFewSamples { .. }) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    let Some((grid_theta, grid_energy)) = best else {
        return Err(last_err.unwrap_or(DtError::Degenerate { theta: 0.0 }));
    };

    let energy = |t: f64| roll_energy(samples, t).unwrap_or(f64::INFINITY);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut lo = (grid_theta - step).max(-ROLL_BOUND);
    let mut hi = (grid_theta + step).min(ROLL_BOUND);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (energy(x1), energy(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = energy(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = energy(x2);
        }
    }
    let theta = 0.5 * (lo + hi);
    let e = energy(theta);
    if e <= grid_energy {
        Ok((theta, e))
    } else {
        Ok((grid_theta, grid_energy))
    }
}
