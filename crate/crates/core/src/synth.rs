//! Synthetic road scenes with known ground truth.
//!
//! Road disparity follows `d = a0 + a1 (v cos θ − u sin θ)` in raw pixel
//! coordinates, which is the disparity of a physical plane seen by a
//! rectified stereo pair. Anomalies add a constant disparity offset inside a
//! rectangle (positive: raised above the road, negative: sunken).

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dt::road_profile;
use crate::io::{
    self, CameraModel, DisparityImage, IoError, LabelImage, RgbImage, LABEL_ANOMALY, LABEL_DRIVABLE,
};

pub const DEFAULT_WIDTH: usize = 96;
pub const DEFAULT_HEIGHT: usize = 64;
pub const DEFAULT_NOISE_SIGMA: f64 = 0.25;

/// Smallest noise-free disparity the random spec sampler accepts; eight
/// noise standard deviations keep every noisy sample positive.
const SAMPLER_MIN_DISPARITY: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("non-positive disparity {value} at pixel ({u}, {v})")]
    NonPositiveDisparity { u: usize, v: usize, value: f64 },
    #[error("anomaly {index} lies outside the {width}x{height} image")]
    AnomalyOutOfBounds { index: usize, width: usize, height: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot write {}: {source}", path.display())]
    Dir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.x && u < self.x + self.w && v >= self.y && v < self.y + self.h
    }

    fn overlaps_with_margin(&self, other: &Rect, margin: usize) -> bool {
        self.x < other.x + other.w + margin
            && other.x < self.x + self.w + margin
            && self.y < other.y + other.h + margin
            && other.y < self.y + self.h + margin
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub rect: Rect,
    /// Disparity offset in pixels; positive is above the road.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub a0: f64,
    pub a1: f64,
    pub theta: f64,
    pub anomalies: Vec<Anomaly>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Noise-free flat road.
    pub fn planar(width: usize, height: usize, a0: f64, a1: f64, theta: f64) -> Self {
        SceneSpec {
            width,
            height,
            a0,
            a1,
            theta,
            anomalies: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn road_disparity(&self, u: usize, v: usize) -> f64 {
        road_profile(self.a0, self.a1, self.theta, u as f64, v as f64)
    }

    /// Noise-free disparity including anomaly offsets.
    pub fn clean_disparity(&self, u: usize, v: usize) -> f64 {
        self.road_disparity(u, v) + self.anomaly_at(u, v).map_or(0.0, |a| a.delta)
    }

    pub fn anomaly_at(&self, u: usize, v: usize) -> Option<&Anomaly> {
        self.anomalies.iter().find(|a| a.rect.contains(u, v))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidSpec("zero image dimension".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("noise sigma {}", self.noise_sigma)));
        }
        for (index, a) in self.anomalies.iter().enumerate() {
            if a.rect.w == 0
                || a.rect.h == 0
                || a.rect.x + a.rect.w > self.width
                || a.rect.y + a.rect.h > self.height
            {
                return Err(SynthError::AnomalyOutOfBounds {
                    index,
                    width: self.width,
                    height: self.height,
                });
            }
        }
        for v in 0..self.height {
            for u in 0..self.width {
                let value = self.clean_disparity(u, v);
                if !(value > 0.0) {
                    return Err(SynthError::NonPositiveDisparity { u, v, value });
                }
            }
        }
        Ok(())
    }

    /// Draws a spec from the randomized ranges: θ ∈ [−10°, 10°],
    /// a0 ∈ [1, 4], a1 ∈ [0.2, 0.8], 0 to 3 anomalies with |delta| ∈ [5, 15].
    /// Draws whose noise-free disparity would drop below a safety margin
    /// are redrawn.
    pub fn random(rng: &mut impl Rng, width: usize, height: usize, noise_sigma: f64) -> Self {
        loop {
            let theta = rng.random_range(-10.0f64..=10.0).to_radians();
            let a0 = rng.random_range(1.0..=4.0);
            let a1 = rng.random_range(0.2..=0.8);
            let mut spec = SceneSpec {
                width,
                height,
                a0,
                a1,
                theta,
                anomalies: Vec::new(),
                noise_sigma,
                seed: rng.random(),
            };
            if spec.min_clean_disparity() < SAMPLER_MIN_DISPARITY {
                continue;
            }
            let n = rng.random_range(0..=3usize);
            let mut attempts = 0;
            while spec.anomalies.len() < n && attempts < 200 {
                attempts += 1;
                let w = rng.random_range(8..=20usize).min(width);
                let h = rng.random_range(6..=12usize).min(height);
                let rect = Rect {
                    x: rng.random_range(0..=width - w),
                    y: rng.random_range((height / 3).min(height - h)..=height - h),
                    w,
                    h,
                };
                let magnitude = rng.random_range(5.0..=15.0);
                let delta = if rng.random_bool(0.5) { magnitude } else { -magnitude };
                if spec.anomalies.iter().any(|a| a.rect.overlaps_with_margin(&rect, 4)) {
                    continue;
                }
                spec.anomalies.push(Anomaly { rect, delta });
                if spec.min_clean_disparity() < SAMPLER_MIN_DISPARITY {
                    spec.anomalies.pop();
                }
            }
            return spec;
        }
    }

    fn min_clean_disparity(&self) -> f64 {
        let mut min = f64::INFINITY;
        for v in 0..self.height {
            for u in 0..self.width {
                min = min.min(self.clean_disparity(u, v));
            }
        }
        min
    }
}

/// Camera used for every synthetic scene of the given size: 100 px focal
/// length, centered principal point, 0.5 m baseline.
pub fn default_camera(width: usize, height: usize) -> CameraModel {
    CameraModel {
        fx: 100.0,
        fy: 100.0,
        u0: width as f64 / 2.0,
        v0: height as f64 / 2.0,
        baseline: 0.5,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub disparity: DisparityImage,
    pub labels: LabelImage,
    pub camera: CameraModel,
    pub rgb: RgbImage,
}

/// Renders a scene. Deterministic given `spec`, including its seed.
pub fn generate(spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| SynthError::InvalidSpec(e.to_string()))?)
    } else {
        None
    };

    let mut data = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let mut d = spec.clean_disparity(u, v);
            if let Some(n) = &noise {
                d += n.sample(&mut rng);
            }
            if !(d > 0.0) {
                return Err(SynthError::NonPositiveDisparity { u, v, value: d });
            }
            data.push(d);
            labels.push(if spec.anomaly_at(u, v).is_some() {
                LABEL_ANOMALY
            } else {
                LABEL_DRIVABLE
            });
        }
    }
    let rgb = render_rgb(spec, &data, &mut rng);
    Ok(Scene {
        spec: spec.clone(),
        disparity: DisparityImage::dense(w, h, data)?,
        labels: LabelImage::new(w, h, labels)?,
        camera: default_camera(w, h),
        rgb,
    })
}

/// Shaded grayscale proxy: brightness follows disparity, with per-pixel
/// texture noise and a faint warm tint on anomalies.
fn render_rgb(spec: &SceneSpec, disparity: &[f64], rng: &mut ChaCha8Rng) -> RgbImage {
    let texture = Normal::new(0.0, 12.0).expect("valid texture sigma");
    let mut data = Vec::with_capacity(disparity.len() * 3);
    for (i, &d) in disparity.iter().enumerate() {
        let (u, v) = (i % spec.width, i / spec.width);
        let base = 70.0 + 3.0 * d;
        let grain = texture.sample(rng);
        let tint = if spec.anomaly_at(u, v).is_some() { 14.0 } else { 0.0 };
        for channel_tint in [tint, 0.0, -tint] {
            data.push((base + grain + channel_tint).round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage {
        width: spec.width,
        height: spec.height,
        data,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub a0: f64,
    pub a1: f64,
    pub theta_rad: f64,
    pub noise_sigma: f64,
    pub n_anomalies: usize,
}

impl ManifestEntry {
    fn from_spec(id: String, split: Split, spec: &SceneSpec) -> Self {
        ManifestEntry {
            id,
            split,
            a0: spec.a0,
            a1: spec.a1,
            theta_rad: spec.theta,
            noise_sigma: spec.noise_sigma,
            n_anomalies: spec.anomalies.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| SynthError::Manifest(e.to_string()))?;
        for e in &self.entries {
            writer.serialize(e).map_err(|e| SynthError::Manifest(e.to_string()))?;
        }
        writer.flush().map_err(|source| SynthError::Dir {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| SynthError::Manifest(e.to_string()))?;
        let entries = reader
            .deserialize()
            .collect::<Result<Vec<ManifestEntry>, _>>()
            .map_err(|e| SynthError::Manifest(e.to_string()))?;
        Ok(Manifest { entries })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Independent RNG for scene `index` of a run seeded with `seed`.
pub fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Train/val/test sizes for `n` scenes at 70/15/15.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let val = n * 15 / 100;
    let test = n * 15 / 100;
    (n - val - test, val, test)
}

pub fn scene_id(index: usize) -> String {
    format!("{index:06}")
}

/// Paths of one scene's files inside a dataset directory.
pub fn scene_paths(root: &Path, split: Split, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    let base = if split == Split::All {
        root.to_path_buf()
    } else {
        root.join(split.name())
    };
    (
        base.join("disp").join(format!("{id}.pgm")),
        base.join("rgb").join(format!("{id}.ppm")),
        base.join("label").join(format!("{id}.pgm")),
    )
}

fn create_dir(path: &Path) -> Result<(), SynthError> {
    fs::create_dir_all(path).map_err(|source| SynthError::Dir {
        path: path.to_path_buf(),
        source,
    })
}

/// Random scene specs for a run, one independent stream per scene.
pub fn random_specs(n: usize, seed: u64, width: usize, height: usize, noise_sigma: f64) -> Vec<SceneSpec> {
    (0..n)
        .map(|i| SceneSpec::random(&mut scene_rng(seed, i as u64), width, height, noise_sigma))
        .collect()
}

fn write_scenes(out_dir: &Path, assignments: Vec<(String, Split, SceneSpec)>) -> Result<Manifest, SynthError> {
    for split in [Split::Train, Split::Val, Split::Test, Split::All] {
        if assignments.iter().any(|(_, s, _)| *s == split) {
            let (d, r, l) = scene_paths(out_dir, split, "x");
            for p in [d, r, l] {
                create_dir(p.parent().expect("scene path has a parent"))?;
            }
        }
    }
    assignments.par_iter().try_for_each(|(id, split, spec)| -> Result<(), SynthError> {
        let scene = generate(spec)?;
        let (disp, rgb, label) = scene_paths(out_dir, *split, id);
        io::write_pgm16(&scene.disparity, disp)?;
        io::write_ppm(&scene.rgb, rgb)?;
        io::write_labels(&scene.labels, label)?;
        Ok(())
    })?;
    let (w, h) = assignments
        .first()
        .map_or((DEFAULT_WIDTH, DEFAULT_HEIGHT), |(_, _, s)| (s.width, s.height));
    io::write_camera(&default_camera(w, h), out_dir.join("camera.txt"))?;
    let manifest = Manifest {
        entries: assignments
            .iter()
            .map(|(id, split, spec)| ManifestEntry::from_spec(id.clone(), *split, spec))
            .collect(),
    };
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Writes `n` random scenes into `train/`, `val/` and `test/` at 70/15/15
/// plus `manifest.csv` and `camera.txt`.
pub fn make_split(n: usize, seed: u64, out_dir: &Path) -> Result<Manifest, SynthError> {
    make_split_with(n, seed, out_dir, DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_NOISE_SIGMA)
}

pub fn make_split_with(
    n: usize,
    seed: u64,
    out_dir: &Path,
    width: usize,
    height: usize,
    noise_sigma: f64,
) -> Result<Manifest, SynthError> {
    let (train, val, _) = split_sizes(n);
    let specs = random_specs(n, seed, width, height, noise_sigma);
    let assignments = specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (scene_id(i), split, spec)
        })
        .collect();
    write_scenes(out_dir, assignments)
}

/// Writes `n` random scenes into a flat layout (`disp/`, `rgb/`, `label/`).
pub fn generate_set(n: usize, seed: u64, out_dir: &Path, noise_sigma: f64) -> Result<Manifest, SynthError> {
    let specs = random_specs(n, seed, DEFAULT_WIDTH, DEFAULT_HEIGHT, noise_sigma);
    let assignments = specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| (scene_id(i), Split::All, spec))
        .collect();
    write_scenes(out_dir, assignments)
}
