use std::path::Path;

use serde::{Deserialize, Serialize};

use super::NetError;
use crate::dt::run_dt_pipeline;
use crate::features::{elevation_map, hha_image, normal_image};
use crate::io::{self, CameraModel, DisparityImage, LabelImage, RgbImage};
use crate::synth::{
    generate, random_specs, scene_id, scene_paths, split_sizes, Manifest, Scene, Split, DEFAULT_HEIGHT, DEFAULT_WIDTH,
};
use crate::tensor::Tensor;

/// Input of the second encoder branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Disparity,
    Normal,
    Elevation,
    Hha,
    /// Transformed disparity.
    Tdisp,
}

/// Disparity scale applied before feeding the raw disparity branch.
const DISPARITY_NORM: f64 = 64.0;
/// Scale of the transformed disparity after removing its offset.
const TDISP_NORM: f64 = 8.0;

impl Modality {
    pub const ALL: [Modality; 6] = [
        Modality::Rgb,
        Modality::Disparity,
        Modality::Normal,
        Modality::Elevation,
        Modality::Hha,
        Modality::Tdisp,
    ];

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb | Modality::Normal | Modality::Hha => 3,
            Modality::Disparity | Modality::Elevation | Modality::Tdisp => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Disparity => "disparity",
            Modality::Normal => "normal",
            Modality::Elevation => "elevation",
            Modality::Hha => "hha",
            Modality::Tdisp => "tdisp",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// RGB scaled to `[-0.5, 0.5]`.
pub fn rgb_input(rgb: &RgbImage) -> Tensor {
    Tensor::from_vec(
        &[rgb.height, rgb.width, 3],
        rgb.data.iter().map(|&b| f64::from(b) / 255.0 - 0.5).collect(),
    )
    .expect("rgb buffer holds three bytes per pixel")
}

fn single(d: &DisparityImage, values: Vec<f64>) -> Tensor {
    Tensor::from_vec(&[d.height(), d.width(), 1], values).expect("one value per pixel")
}

/// Second-branch input for one scene.
///
/// Disparity is divided by 64. Transformed disparity has its offset δ
/// removed and is divided by 8, so the road sits near zero. Normals and
/// elevation are raw; HHA is already in `[0, 1]`. Elevation and HHA use the
/// road mask found by the transform pipeline.
pub fn modality_input(modality: Modality, d: &DisparityImage, rgb: &RgbImage, cam: &CameraModel) -> Result<Tensor, NetError> {
    Ok(match modality {
        Modality::Rgb => rgb_input(rgb),
        Modality::Disparity => single(d, d.data().iter().map(|x| x / DISPARITY_NORM).collect()),
        Modality::Normal => normal_image(d, cam).map,
        Modality::Elevation => {
            let road = run_dt_pipeline(d)?.road_mask;
            elevation_map(d, cam, &road)?.map
        }
        Modality::Hha => {
            let road = run_dt_pipeline(d)?.road_mask;
            hha_image(d, cam, &road)?.map
        }
        Modality::Tdisp => {
            let out = run_dt_pipeline(d)?;
            let delta = out.model.delta;
            let t = out.transformed;
            let values = t
                .data()
                .iter()
                .zip(t.valid_mask())
                .map(|(&x, &ok)| if ok { (x - delta) / TDISP_NORM } else { 0.0 })
                .collect();
            single(&t, values)
        }
    })
}

/// One scene prepared for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: Tensor,
    pub aux: Tensor,
    pub labels: Vec<u8>,
}

impl Sample {
    pub fn new(id: String, d: &DisparityImage, rgb: &RgbImage, labels: &LabelImage, cam: &CameraModel, modality: Modality) -> Result<Self, NetError> {
        Ok(Self {
            id,
            rgb: rgb_input(rgb),
            aux: modality_input(modality, d, rgb, cam)?,
            labels: labels.labels().to_vec(),
        })
    }

    pub fn from_scene(id: String, scene: &Scene, modality: Modality) -> Result<Self, NetError> {
        Self::new(id, &scene.disparity, &scene.rgb, &scene.labels, &scene.camera, modality)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    /// Renders `n` random scenes in memory and splits them 70/15/15, in the
    /// same order `synth split` would write them.
    pub fn synthetic(n: usize, seed: u64, noise_sigma: f64, modality: Modality) -> Result<Self, NetError> {
        let (train, val, _) = split_sizes(n);
        let mut out = Self::default();
        for (i, spec) in random_specs(n, seed, DEFAULT_WIDTH, DEFAULT_HEIGHT, noise_sigma).iter().enumerate() {
            let sample = Sample::from_scene(scene_id(i), &generate(spec)?, modality)?;
            if i < train {
                out.train.push(sample);
            } else if i < train + val {
                out.val.push(sample);
            } else {
                out.test.push(sample);
            }
        }
        Ok(out)
    }

    /// Loads the train, val and test splits written by `synth split`.
    pub fn load(root: &Path, modality: Modality) -> Result<Self, NetError> {
        Ok(Self {
            train: load_split(root, Split::Train, modality)?,
            val: load_split(root, Split::Val, modality)?,
            test: load_split(root, Split::Test, modality)?,
        })
    }
}

/// Scenes of one split, in manifest order.
pub fn load_split(root: &Path, split: Split, modality: Modality) -> Result<Vec<Sample>, NetError> {
    let manifest = Manifest::read(&root.join("manifest.csv"))?;
    let cam = io::read_camera(root.join("camera.txt"))?;
    manifest
        .split(split)
        .map(|e| {
            let (disp, rgb, label) = scene_paths(root, split, &e.id);
            let d = io::read_pgm16(disp)?;
            let rgb = io::read_ppm(rgb)?;
            let labels = io::read_labels(label)?;
            Sample::new(e.id.clone(), &d, &rgb, &labels, &cam, modality)
        })
        .collect()
}
