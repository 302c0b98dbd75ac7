//! `key=value` text documents for fitted road models and camera intrinsics.

use std::collections::HashMap;
use std::path::Path;

use super::{read_bytes, write_bytes, CameraModel, IoError};
use crate::dt::RoadModel;

fn parse_pairs(text: &str) -> HashMap<String, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn number(pairs: &HashMap<String, String>, key: &'static str) -> Result<f64, IoError> {
    let raw = pairs.get(key).ok_or(IoError::MissingKey(key))?;
    raw.parse::<f64>().map_err(|_| IoError::BadValue {
        key: key.to_string(),
        value: raw.clone(),
    })
}

fn utf8(bytes: &[u8]) -> Result<&str, IoError> {
    std::str::from_utf8(bytes).map_err(|e| IoError::format(e.valid_up_to(), "document is not UTF-8"))
}

/// Renders a road model. `f64` display is the shortest string that parses
/// back to the same value, so the document round-trips exactly.
pub fn render_road_model(model: &RoadModel) -> String {
    format!(
        "a0={}\na1={}\ntheta_rad={}\ndelta={}\nenergy={}\ninlier_count={}\n",
        model.a0, model.a1, model.theta, model.delta, model.energy, model.inlier_count
    )
}

pub fn parse_road_model(text: &str) -> Result<RoadModel, IoError> {
    let pairs = parse_pairs(text);
    let count_raw = pairs.get("inlier_count").ok_or(IoError::MissingKey("inlier_count"))?;
    let inlier_count = count_raw.parse::<usize>().map_err(|_| IoError::BadValue {
        key: "inlier_count".into(),
        value: count_raw.clone(),
    })?;
    Ok(RoadModel {
        a0: number(&pairs, "a0")?,
        a1: number(&pairs, "a1")?,
        theta: number(&pairs, "theta_rad")?,
        delta: number(&pairs, "delta")?,
        energy: number(&pairs, "energy")?,
        inlier_count,
    })
}

pub fn read_road_model(path: impl AsRef<Path>) -> Result<RoadModel, IoError> {
    parse_road_model(utf8(&read_bytes(path.as_ref())?)?)
}

pub fn write_road_model(model: &RoadModel, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), render_road_model(model).as_bytes())
}

pub fn render_camera(cam: &CameraModel) -> String {
    format!(
        "fx={}\nfy={}\nu0={}\nv0={}\nbaseline={}\n",
        cam.fx, cam.fy, cam.u0, cam.v0, cam.baseline
    )
}

pub fn parse_camera(text: &str) -> Result<CameraModel, IoError> {
    let pairs = parse_pairs(text);
    CameraModel::new(
        number(&pairs, "fx")?,
        number(&pairs, "fy")?,
        number(&pairs, "u0")?,
        number(&pairs, "v0")?,
        number(&pairs, "baseline")?,
    )
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<CameraModel, IoError> {
    parse_camera(utf8(&read_bytes(path.as_ref())?)?)
}

pub fn write_camera(cam: &CameraModel, path: impl AsRef<Path>) -> Result<(), IoError> {
    write_bytes(path.as_ref(), render_camera(cam).as_bytes())
}
