//! v-disparity histogram and the coarse road segmentation built on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DtError;
use crate::io::DisparityImage;

const RANSAC_ITERATIONS: usize = 500;
const RANSAC_SEED: u64 = 0x5eed_0f_da7a;
/// Inlier threshold in bins for the v-disparity line.
const LINE_INLIER_BINS: f64 = 2.0;
/// A row contributes a candidate only if its peak bin has this many pixels.
const MIN_PEAK_COUNT: u32 = 3;
/// Pixel-to-line distance (disparity pixels) for the coarse mask.
pub(crate) const MASK_TAU: f64 = 3.0;
const MIN_CONSENSUS: f64 = 0.2;

/// Per-row histogram of disparities, 1 px bins.
#[derive(Clone, Debug, PartialEq)]
pub struct VDisparityMap {
    pub rows: usize,
    pub bins: usize,
    /// Row-major `rows × bins`.
    pub counts: Vec<u32>,
}

impl VDisparityMap {
    pub fn count(&self, row: usize, bin: usize) -> u32 {
        self.counts[row * self.bins + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }
}

pub fn build_v_disparity(d: &DisparityImage) -> Result<VDisparityMap, DtError> {
    let max = d.iter_valid().map(|(_, _, x)| x).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(DtError::EmptyInput);
    }
    let bins = max.floor() as usize + 1;
    let mut counts = vec![0u32; d.height() * bins];
    for (_, v, x) in d.iter_valid() {
        counts[v * bins + x.floor() as usize] += 1;
    }
    Ok(VDisparityMap {
        rows: d.height(),
        bins,
        counts,
    })
}

/// `d = m·v + c` in the v-disparity plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub m: f64,
    pub c: f64,
}

impl Line {
    pub fn at(&self, v: f64) -> f64 {
        self.m * v + self.c
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseMask {
    pub width: usize,
    pub height: usize,
    pub mask: Vec<bool>,
}

impl CoarseMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.mask[v * self.width + u]
    }
}

/// Least-squares line through `(v, d)` points.
fn fit_line(points: &[(f64, f64)]) -> Option<Line> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mv = points.iter().map(|p| p.0).sum::<f64>() / n;
    let md = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut svv, mut svd) = (0.0, 0.0);
    for &(v, d) in points {
        svv += (v - mv) * (v - mv);
        svd += (v - mv) * (d - md);
    }
    if svv <= 0.0 {
        return None;
    }
    let m = svd / svv;
    Some(Line { m, c: md - m * mv })
}

/// One candidate per row: the most populated bin (if it holds at least three
/// pixels), located at the mean disparity of the pixels inside that bin.
fn row_peaks(d: &DisparityImage, vmap: &VDisparityMap) -> Vec<(f64, f64)> {
    let mut sums = vec![0.0; vmap.rows * vmap.bins];
    for (_, v, x) in d.iter_valid() {
        sums[v * vmap.bins + x.floor() as usize] += x;
    }
    (0..vmap.rows)
        .filter_map(|v| {
            let row = &vmap.counts[v * vmap.bins..(v + 1) * vmap.bins];
            let (bin, &count) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
            (count >= MIN_PEAK_COUNT).then(|| (v as f64, sums[v * vmap.bins + bin] / f64::from(count)))
        })
        .collect()
}

fn inliers(points: &[(f64, f64)], line: &Line) -> Vec<(f64, f64)> {
    points
        .iter()
        .copied()
        .filter(|&(v, d)| (d - line.at(v)).abs() < LINE_INLIER_BINS)
        .collect()
}

/// Finds the dominant road line in the v-disparity map by RANSAC over the
/// per-row peaks, refits it to the consensus set and keeps the pixels within
/// 3 px of it.
pub fn coarse_road_mask(d: &DisparityImage) -> Result<(CoarseMask, Line), DtError> {
    let vmap = build_v_disparity(d)?;
    let peaks = row_peaks(d, &vmap);
    if peaks.len() < 2 {
        return Err(DtError::NoRoadFound {
            consensus: peaks.len(),
            candidates: peaks.len(),
        });
    }

    let mut best: Option<(usize, Line)> = None;
    let mut consider = |i: usize, j: usize| {
        let (p, q) = (peaks[i], peaks[j]);
        let m = (q.1 - p.1) / (q.0 - p.0);
        let line = Line { m, c: p.1 - m * p.0 };
        let support = inliers(&peaks, &line).len();
        if best.is_none_or(|(s, _)| support > s) {
            best = Some((support, line));
        }
    };
    let pairs = peaks.len() * (peaks.len() - 1) / 2;
    if pairs <= RANSAC_ITERATIONS {
        for i in 0..peaks.len() {
            for j in i + 1..peaks.len() {
                consider(i, j);
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(RANSAC_SEED);
        for _ in 0..RANSAC_ITERATIONS {
            let i = rng.random_range(0..peaks.len());
            let mut j = rng.random_range(0..peaks.len() - 1);
            if j >= i {
                j += 1;
            }
            consider(i, j);
        }
    }
    let (support, line) = best.expect("at least one pair was considered");
    if (support as f64) < MIN_CONSENSUS * peaks.len() as f64 || support < 2 {
        return Err(DtError::NoRoadFound {
            consensus: support,
            candidates: peaks.len(),
        });
    }
    let line = fit_line(&inliers(&peaks, &line)).unwrap_or(line);

    let mut mask = vec![false; d.width() * d.height()];
    for (u, v, x) in d.iter_valid() {
        mask[v * d.width() + u] = (x - line.at(v as f64)).abs() < MASK_TAU;
    }
    Ok((
        CoarseMask {
            width: d.width(),
            height: d.height(),
            mask,
        },
        line,
    ))
}
