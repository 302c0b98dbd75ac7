//! Geometric modalities derived from disparity: depth, surface normals,
//! elevation above the fitted ground plane, and HHA encodings.
//!
//! Back-projection uses a camera frame with x right, y down and z forward,
//! so `P = ((u − u0)·z/fx, (v − v0)·z/fy, z)` with `z = fx·b/d`.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::Serialize;
use thiserror::Error;

use crate::dt::{run_dt_pipeline, CoarseMask, DtError};
use crate::io::{CameraModel, DisparityImage};
use crate::tensor::Tensor;

/// Fixed HHA channel ranges: disparity (px), elevation (m), angle (degrees).
pub const HHA_RANGES: [(f64, f64); 3] = [(0.0, 64.0), (-0.5, 2.0), (0.0, 90.0)];

/// Offset added to elevation before taking its coefficient of variation.
pub const ELEVATION_CV_OFFSET: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("mask selects no valid pixel")]
    EmptyMask,
    #[error("plane fit is degenerate over {points} points")]
    DegeneratePlane { points: usize },
    #[error("mask is {got:?}, image is {expected:?}")]
    SizeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Dt(#[from] DtError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Depth,
    Normal3,
    Elevation,
    Hha3,
    Tdisp,
}

/// Plane `n·P + offset = 0` with unit `n` oriented so the camera centre is
/// on the positive side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    pub fn signed_distance(&self, p: [f64; 3]) -> f64 {
        self.normal[0] * p[0] + self.normal[1] * p[1] + self.normal[2] * p[2] + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureMeta {
    pub camera: CameraModel,
    pub ground: Option<Plane>,
    /// Per-channel `(lo, hi)` used to rescale into `[0, 1]`.
    pub ranges: Option<Vec<(f64, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerivedFeature {
    pub kind: FeatureKind,
    pub map: Tensor,
    /// Pixels where the feature is defined; others hold zeros.
    pub valid: Vec<bool>,
    pub meta: FeatureMeta,
}

impl DerivedFeature {
    /// Values of channel `k` at pixels that are both valid and selected.
    pub fn channel_values(&self, k: usize, select: impl Fn(usize) -> bool) -> Vec<f64> {
        let c = self.map.dims()[2];
        self.valid
            .iter()
            .enumerate()
            .filter(|&(i, &ok)| ok && select(i))
            .map(|(i, _)| self.map.data()[i * c + k])
            .collect()
    }

    /// Per-pixel channel mean at valid, selected pixels.
    pub fn mean_channel_values(&self, select: impl Fn(usize) -> bool) -> Vec<f64> {
        let c = self.map.dims()[2];
        self.valid
            .iter()
            .enumerate()
            .filter(|&(i, &ok)| ok && select(i))
            .map(|(i, _)| self.map.data()[i * c..][..c].iter().sum::<f64>() / c as f64)
            .collect()
    }
}

fn back_project(cam: &CameraModel, u: usize, v: usize, d: f64) -> [f64; 3] {
    let z = cam.fx * cam.baseline / d;
    [(u as f64 - cam.u0) * z / cam.fx, (v as f64 - cam.v0) * z / cam.fy, z]
}

fn points(d: &DisparityImage, cam: &CameraModel) -> Vec<Option<[f64; 3]>> {
    (0..d.height())
        .flat_map(|v| (0..d.width()).map(move |u| (u, v)))
        .map(|(u, v)| d.get(u, v).filter(|&x| x > 0.0).map(|x| back_project(cam, u, v, x)))
        .collect()
}

fn meta(cam: &CameraModel) -> FeatureMeta {
    FeatureMeta {
        camera: *cam,
        ground: None,
        ranges: None,
    }
}

/// `z = fx·b/d` at valid pixels with positive disparity.
pub fn depth_from_disparity(d: &DisparityImage, cam: &CameraModel) -> DerivedFeature {
    let pts = points(d, cam);
    let map = Tensor::from_vec(
        &[d.height(), d.width(), 1],
        pts.iter().map(|p| p.map_or(0.0, |p| p[2])).collect(),
    )
    .expect("one value per pixel");
    DerivedFeature {
        kind: FeatureKind::Depth,
        map,
        valid: pts.iter().map(Option::is_some).collect(),
        meta: meta(cam),
    }
}

/// Unit normals from the cross product of central-difference tangents,
/// oriented toward the camera (`n_z < 0`). Pixels without a full valid
/// 4-neighbourhood are masked.
pub fn normal_image(d: &DisparityImage, cam: &CameraModel) -> DerivedFeature {
    let (w, h) = (d.width(), d.height());
    let pts = points(d, cam);
    let mut map = Tensor::zeros(&[h, w, 3]);
    let mut valid = vec![false; w * h];
    for v in 1..h.saturating_sub(1) {
        for u in 1..w.saturating_sub(1) {
            let (Some(_), Some(l), Some(r), Some(t), Some(b)) = (
                pts[v * w + u],
                pts[v * w + u - 1],
                pts[v * w + u + 1],
                pts[(v - 1) * w + u],
                pts[(v + 1) * w + u],
            ) else {
                continue;
            };
            let tu = Vector3::from(r) - Vector3::from(l);
            let tv = Vector3::from(b) - Vector3::from(t);
            let mut n = tu.cross(&tv);
            let norm = n.norm();
            if !(norm > 0.0) {
                continue;
            }
            n /= norm;
            if n.z > 0.0 {
                n = -n;
            }
            for k in 0..3 {
                map.set3(v, u, k, n[k]);
            }
            valid[v * w + u] = true;
        }
    }
    DerivedFeature {
        kind: FeatureKind::Normal3,
        map,
        valid,
        meta: meta(cam),
    }
}

fn check_mask(d: &DisparityImage, mask: &CoarseMask) -> Result<(), FeatureError> {
    if (mask.width, mask.height) != (d.width(), d.height()) {
        return Err(FeatureError::SizeMismatch {
            expected: (d.width(), d.height()),
            got: (mask.width, mask.height),
        });
    }
    Ok(())
}

/// Total least-squares plane through the back-projected masked pixels.
pub fn fit_ground_plane(d: &DisparityImage, cam: &CameraModel, mask: &CoarseMask) -> Result<Plane, FeatureError> {
    check_mask(d, mask)?;
    let pts: Vec<Vector3<f64>> = d
        .iter_valid()
        .filter(|&(u, v, x)| x > 0.0 && mask.get(u, v))
        .map(|(u, v, x)| Vector3::from(back_project(cam, u, v, x)))
        .collect();
    if pts.is_empty() {
        return Err(FeatureError::EmptyMask);
    }
    let n = pts.len();
    let centroid = pts.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let q = p - centroid;
        cov += q * q.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, top) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if n < 3 || !(mid > 1e-12 * top) {
        return Err(FeatureError::DegeneratePlane { points: n });
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    normal /= normal.norm();
    let mut offset = -normal.dot(&centroid);
    if offset < 0.0 {
        normal = -normal;
        offset = -offset;
    }
    Ok(Plane {
        normal: normal.into(),
        offset,
    })
}

/// Signed distance (m) to the plane fitted over `mask`, positive on the
/// camera side.
pub fn elevation_map(d: &DisparityImage, cam: &CameraModel, mask: &CoarseMask) -> Result<DerivedFeature, FeatureError> {
    let plane = fit_ground_plane(d, cam, mask)?;
    let pts = points(d, cam);
    let map = Tensor::from_vec(
        &[d.height(), d.width(), 1],
        pts.iter().map(|p| p.map_or(0.0, |p| plane.signed_distance(p))).collect(),
    )
    .expect("one value per pixel");
    Ok(DerivedFeature {
        kind: FeatureKind::Elevation,
        map,
        valid: pts.iter().map(Option::is_some).collect(),
        meta: FeatureMeta {
            camera: *cam,
            ground: Some(plane),
            ranges: None,
        },
    })
}

fn rescale(x: f64, (lo, hi): (f64, f64)) -> f64 {
    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Angle in degrees between the pixel normal and the ground normal, folded
/// into `[0°, 90°]`.
fn angle_to_ground(n: [f64; 3], ground: &Plane) -> f64 {
    let c = (n[0] * ground.normal[0] + n[1] * ground.normal[1] + n[2] * ground.normal[2]).abs();
    c.min(1.0).acos().to_degrees()
}

/// Disparity, elevation and angle to the ground normal, each rescaled to
/// `[0, 1]` with [`HHA_RANGES`]. Defined where the normal is.
pub fn hha_image(d: &DisparityImage, cam: &CameraModel, mask: &CoarseMask) -> Result<DerivedFeature, FeatureError> {
    let raw = hha_raw(d, cam, mask)?;
    let mut map = raw.map;
    for px in map.data_mut().chunks_exact_mut(3) {
        for (k, v) in px.iter_mut().enumerate() {
            *v = rescale(*v, HHA_RANGES[k]);
        }
    }
    for (i, &ok) in raw.valid.iter().enumerate() {
        if !ok {
            map.data_mut()[i * 3..][..3].fill(0.0);
        }
    }
    Ok(DerivedFeature {
        kind: FeatureKind::Hha3,
        map,
        valid: raw.valid,
        meta: FeatureMeta {
            ranges: Some(HHA_RANGES.to_vec()),
            ..raw.meta
        },
    })
}

/// HHA channels before rescaling: disparity (px), elevation (m), angle (°).
pub fn hha_raw(d: &DisparityImage, cam: &CameraModel, mask: &CoarseMask) -> Result<DerivedFeature, FeatureError> {
    let elevation = elevation_map(d, cam, mask)?;
    let ground = elevation.meta.ground.expect("elevation records its plane");
    let normals = normal_image(d, cam);
    let (h, w) = (d.height(), d.width());
    let mut map = Tensor::zeros(&[h, w, 3]);
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !normals.valid[i] {
                continue;
            }
            let n = [normals.map.at3(v, u, 0), normals.map.at3(v, u, 1), normals.map.at3(v, u, 2)];
            map.set3(v, u, 0, d.get(u, v).unwrap_or(0.0));
            map.set3(v, u, 1, elevation.map.data()[i]);
            map.set3(v, u, 2, angle_to_ground(n, &ground));
        }
    }
    Ok(DerivedFeature {
        kind: FeatureKind::Hha3,
        map,
        valid: normals.valid,
        meta: elevation.meta,
    })
}

/// Transformed disparity from the full estimation pipeline, as a feature.
pub fn transformed_disparity(d: &DisparityImage, cam: &CameraModel) -> Result<DerivedFeature, FeatureError> {
    let out = run_dt_pipeline(d)?;
    let t = out.transformed;
    let map = Tensor::from_vec(&[t.height(), t.width(), 1], t.data().to_vec()).expect("one value per pixel");
    Ok(DerivedFeature {
        kind: FeatureKind::Tdisp,
        map,
        valid: t.valid_mask().to_vec(),
        meta: meta(cam),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel::new(100.0, 100.0, 8.0, 6.0, 0.5).unwrap()
    }

    fn full_mask(w: usize, h: usize) -> CoarseMask {
        CoarseMask {
            width: w,
            height: h,
            mask: vec![true; w * h],
        }
    }

    #[test]
    fn depth_formula() {
        let d = DisparityImage::from_fn(3, 2, |u, v| (u + v != 0).then_some(2.0 * (1 + u % 2) as f64)).unwrap();
        let z = depth_from_disparity(&d, &cam());
        assert_eq!(z.map.at3(0, 2, 0), 25.0);
        assert_eq!(z.map.at3(0, 1, 0), 12.5);
        assert!(!z.valid[0]);
        assert_eq!(z.map.data()[0], 0.0);
    }

    #[test]
    fn fronto_parallel_normals() {
        let d = DisparityImage::dense(6, 5, vec![4.0; 30]).unwrap();
        let n = normal_image(&d, &cam());
        for v in 1..4 {
            for u in 1..5 {
                assert!(n.valid[v * 6 + u]);
                assert_eq!([n.map.at3(v, u, 0), n.map.at3(v, u, 1), n.map.at3(v, u, 2)], [0.0, 0.0, -1.0]);
            }
        }
        assert!(!n.valid[0]);
    }

    #[test]
    fn plane_elevation_vanishes() {
        let d = DisparityImage::from_fn(16, 12, |u, v| Some(3.0 + 0.5 * v as f64 + 0.05 * u as f64)).unwrap();
        let e = elevation_map(&d, &cam(), &full_mask(16, 12)).unwrap();
        assert!(e.map.data().iter().all(|x| x.abs() < 1e-9));
        assert!((e.map.sum() / 192.0).abs() < 1e-9);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let d = DisparityImage::dense(4, 4, vec![4.0; 16]).unwrap();
        let mut mask = full_mask(4, 4);
        mask.mask.fill(false);
        assert_eq!(elevation_map(&d, &cam(), &mask), Err(FeatureError::EmptyMask));
        let row = CoarseMask {
            width: 4,
            height: 4,
            mask: (0..16).map(|i| i < 4).collect(),
        };
        assert!(matches!(
            elevation_map(&d, &cam(), &row),
            Err(FeatureError::DegeneratePlane { .. })
        ));
    }

    #[test]
    fn hha_channels_in_unit_range() {
        let d = DisparityImage::from_fn(16, 12, |u, v| Some(if u > 10 { 90.0 } else { 3.0 + 0.5 * v as f64 })).unwrap();
        let hha = hha_image(&d, &cam(), &full_mask(16, 12)).unwrap();
        assert!(hha.map.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
