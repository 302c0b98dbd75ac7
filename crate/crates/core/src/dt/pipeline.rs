use super::vdisparity::MASK_TAU;
use super::{
    coarse_road_mask, delta_for_residual, estimate_roll, fit_profile, roll_energy, transform, CoarseMask,
    DispSample, DtError, Line, RoadModel,
};
use crate::io::DisparityImage;

/// Cap on the number of samples used for the roll and profile fits.
pub const MAX_SAMPLES: usize = 5000;

/// Refits against the full image after the initial coarse-mask fit.
const REFINE_PASSES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DtOutput {
    pub transformed: DisparityImage,
    pub model: RoadModel,
    /// Road region found in the v-disparity map.
    pub coarse_mask: CoarseMask,
    /// Pixels within 3 px of the final fitted profile.
    pub road_mask: CoarseMask,
    pub line: Line,
}

/// Uniformly strided samples of the masked valid pixels, at most `max`.
pub fn sample_mask(d: &DisparityImage, mask: &CoarseMask, max: usize) -> Vec<DispSample> {
    let picked: Vec<(usize, usize, f64)> = d.iter_valid().filter(|&(u, v, _)| mask.get(u, v)).collect();
    let stride = picked.len().div_ceil(max.max(1)).max(1);
    picked
        .into_iter()
        .step_by(stride)
        .map(|(u, v, x)| DispSample::new(u as f64, v as f64, x))
        .collect()
}

fn fit(samples: &[DispSample]) -> Result<(f64, f64, f64), DtError> {
    let (theta, _) = estimate_roll(samples)?;
    let (a0, a1) = fit_profile(samples, theta)?;
    Ok((theta, a0, a1))
}

fn profile_mask(d: &DisparityImage, model: &RoadModel) -> CoarseMask {
    let mut mask = vec![false; d.width() * d.height()];
    for (u, v, x) in d.iter_valid() {
        mask[v * d.width() + u] = (x - model.profile(u as f64, v as f64)).abs() < MASK_TAU;
    }
    CoarseMask {
        width: d.width(),
        height: d.height(),
        mask,
    }
}

/// Coarse mask → roll and profile fit → transform.
///
/// The first fit uses samples from the v-disparity mask. The fit is then
/// repeated on every valid pixel within 3 px of the current profile until
/// that set stops changing, which drops anomaly pixels that happen to fall
/// inside the v-disparity band when the rig is rolled.
pub fn run_dt_pipeline(d: &DisparityImage) -> Result<DtOutput, DtError> {
    if d.valid_count() == 0 {
        return Err(DtError::EmptyInput);
    }
    let (coarse_mask, line) = coarse_road_mask(d)?;
    let mut samples = sample_mask(d, &coarse_mask, MAX_SAMPLES);
    let (mut theta, mut a0, mut a1) = fit(&samples)?;
    let mut model = RoadModel {
        a0,
        a1,
        theta,
        ..RoadModel::zero()
    };
    let mut road_mask = coarse_mask.clone();
    for _ in 0..REFINE_PASSES {
        let next = profile_mask(d, &model);
        if next == road_mask || next.count() < 3 {
            break;
        }
        road_mask = next;
        samples = sample_mask(d, &road_mask, MAX_SAMPLES);
        (theta, a0, a1) = fit(&samples)?;
        model = RoadModel {
            a0,
            a1,
            theta,
            ..RoadModel::zero()
        };
    }
    model.energy = roll_energy(&samples, theta)?;
    model.inlier_count = samples.len();

    let min_residual = d
        .iter_valid()
        .map(|(u, v, x)| x - model.profile(u as f64, v as f64))
        .fold(f64::INFINITY, f64::min);
    model.delta = delta_for_residual(min_residual);
    let transformed = transform(d, &model).image;
    Ok(DtOutput {
        transformed,
        model,
        coarse_mask,
        road_mask,
        line,
    })
}
