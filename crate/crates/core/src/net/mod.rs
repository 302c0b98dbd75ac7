//! Two-branch encoder-decoder for drivable-area and anomaly segmentation.
//!
//! The RGB branch and the second-modality branch each run two stride-2
//! stages. After every stage the two feature maps are fused and the fused
//! map feeds the next RGB stage. A decoder upsamples back to input size and
//! a 1×1 head produces three class logits.

mod ablation;
mod data;
mod train;

pub use ablation::{ablation, AblationRow, AblationTable};
pub use data::{load_split, modality_input, rgb_input, Dataset, Modality, Sample};
pub use train::{class_weights, clip_global_norm, evaluate, infer, loss_and_grads, train, Inference, TrainedModel};

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfm::{cost_model, dfm_on_tape, DfmParams, DfmVars, Variant};
use crate::io::IoError;
use crate::metrics::MetricsError;
use crate::synth::SynthError;
use crate::tensor::ops::Padding;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const NUM_CLASSES: usize = 3;
/// Spatial size of the dynamic kernels inside fusion layers.
pub const DFM_KERNEL: usize = 3;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error("input is {got:?}, model expects {expected:?}")]
    InputSize { expected: Vec<usize>, got: Vec<usize> },
    #[error("split {0} has no scenes")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("feature extraction: {0}")]
    Feature(#[from] crate::features::FeatureError),
    #[error("disparity transform: {0}")]
    Dt(#[from] crate::dt::DtError),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    Addition,
    Concatenation,
    DfmFirst,
    DfmLast,
    DfmAll,
}

impl Fusion {
    pub const ALL: [Fusion; 5] = [
        Fusion::Addition,
        Fusion::Concatenation,
        Fusion::DfmFirst,
        Fusion::DfmLast,
        Fusion::DfmAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fusion::Addition => "addition",
            Fusion::Concatenation => "concatenation",
            Fusion::DfmFirst => "dfm-first",
            Fusion::DfmLast => "dfm-last",
            Fusion::DfmAll => "dfm-all",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Fusion op used after encoder stage `stage` of `stages`.
    fn at_stage(self, stage: usize, stages: usize) -> StageFusion {
        match self {
            Fusion::Addition => StageFusion::Add,
            Fusion::Concatenation => StageFusion::Concat,
            Fusion::DfmFirst if stage == 0 => StageFusion::Dfm,
            Fusion::DfmLast if stage + 1 == stages => StageFusion::Dfm,
            Fusion::DfmAll => StageFusion::Dfm,
            _ => StageFusion::Add,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum StageFusion {
    Add,
    Concat,
    Dfm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    None,
    InverseFrequency,
}

fn default_eval_every() -> usize {
    25
}

fn default_batch() -> usize {
    1
}

fn default_clip() -> Option<f64> {
    Some(DEFAULT_CLIP_NORM)
}

/// Default bound on the global gradient norm.
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

/// Network and training settings. Serialized as JSON with these field names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub height: usize,
    pub width: usize,
    pub stage_channels: Vec<usize>,
    pub fusion: Fusion,
    pub modality: Modality,
    pub classes: usize,
    pub lr: f64,
    pub momentum: f64,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub class_weighting: ClassWeighting,
    /// Gradients are rescaled so their global L2 norm is at most this.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Dataset directory produced by `synth split`.
    #[serde(default)]
    pub data: Option<PathBuf>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            stage_channels: vec![8, 16],
            fusion: Fusion::DfmAll,
            modality: Modality::Tdisp,
            classes: NUM_CLASSES,
            lr: 0.01,
            momentum: 0.9,
            iterations: 400,
            batch_size: 1,
            eval_every: 25,
            class_weighting: ClassWeighting::InverseFrequency,
            clip_norm: Some(DEFAULT_CLIP_NORM),
            seed: 0,
            data: None,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let stages = self.stage_channels.len();
        if stages == 0 || self.stage_channels.contains(&0) {
            return Err(NetError::Config("stage_channels must be non-empty and positive".into()));
        }
        let div = 1usize << stages;
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(NetError::Config(format!(
                "input {}x{} must be a positive multiple of {div}",
                self.height, self.width
            )));
        }
        if self.classes != NUM_CLASSES {
            return Err(NetError::Config(format!("classes must be {NUM_CLASSES}")));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::Config("lr must be >= 0 and momentum in [0, 1)".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(NetError::Config("clip_norm must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(NetError::Config("batch_size and eval_every must be positive".into()));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, NetError> {
        let text = std::fs::read_to_string(path).map_err(|source| NetError::File {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| NetError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    He(usize),
    Zero,
    /// Filled from a fusion layer's identity initialization.
    DfmIdentity(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    init: Init,
}

fn conv_specs(out: &mut Vec<ParamSpec>, name: &str, k: usize, cin: usize, cout: usize) {
    out.push(ParamSpec {
        name: format!("{name}.w"),
        dims: vec![k, k, cin, cout],
        init: Init::He(k * k * cin),
    });
    out.push(ParamSpec {
        name: format!("{name}.b"),
        dims: vec![cout],
        init: Init::Zero,
    });
}

/// Every parameter tensor, in the order the forward pass consumes them.
pub fn param_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let stages = cfg.stage_channels.len();
    let (mut r_in, mut t_in) = (3, cfg.modality.channels());
    for (s, &c) in cfg.stage_channels.iter().enumerate() {
        conv_specs(&mut out, &format!("enc{s}.rgb"), 3, r_in, c);
        conv_specs(&mut out, &format!("enc{s}.aux"), 3, t_in, c);
        match cfg.fusion.at_stage(s, stages) {
            StageFusion::Add => {}
            StageFusion::Concat => conv_specs(&mut out, &format!("fuse{s}.mix"), 1, 2 * c, c),
            StageFusion::Dfm => {
                let p = DfmParams::zeros(c, c, DFM_KERNEL).expect("odd kernel");
                for (name, t) in ["omega1.w", "omega1.b", "omega2.w", "omega2.b"].iter().zip(p.tensors()) {
                    out.push(ParamSpec {
                        name: format!("fuse{s}.{name}"),
                        dims: t.dims().to_vec(),
                        init: Init::DfmIdentity(c),
                    });
                }
            }
        }
        r_in = c;
        t_in = c;
    }
    let mut c_in = *cfg.stage_channels.last().expect("validated");
    for s in (0..stages).rev() {
        let c_out = cfg.stage_channels[s.saturating_sub(1)];
        conv_specs(&mut out, &format!("dec{}", stages - 1 - s), 3, c_in, c_out);
        c_in = c_out;
    }
    conv_specs(&mut out, "head", 1, c_in, cfg.classes);
    out
}

/// Fresh parameters: He-normal convolutions, zero biases, identity fusion
/// layers.
pub fn init_params<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Vec<Tensor> {
    let specs = param_specs(cfg);
    let mut out = Vec::with_capacity(specs.len());
    let mut i = 0;
    while i < specs.len() {
        match specs[i].init {
            Init::He(fan_in) => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n: usize = specs[i].dims.iter().product();
                out.push(Tensor::from_vec(&specs[i].dims, (0..n).map(|_| normal.sample(rng)).collect()).expect("dims"));
            }
            Init::Zero => out.push(Tensor::zeros(&specs[i].dims)),
            Init::DfmIdentity(c) => {
                let p = DfmParams::identity(c, DFM_KERNEL).expect("odd kernel");
                out.extend(p.tensors().into_iter().cloned());
                i += 4;
                continue;
            }
        }
        i += 1;
    }
    out
}

pub fn param_count(cfg: &NetConfig) -> usize {
    param_specs(cfg).iter().map(|s| s.dims.iter().product::<usize>()).sum()
}

/// Multiply-accumulates of one forward pass.
pub fn forward_macs(cfg: &NetConfig) -> u64 {
    let conv = |h: usize, w: usize, k: usize, cin: usize, cout: usize| (h * w * k * k * cin * cout) as u64;
    let stages = cfg.stage_channels.len();
    let (mut h, mut w) = (cfg.height, cfg.width);
    let (mut r_in, mut t_in) = (3, cfg.modality.channels());
    let mut total = 0;
    for (s, &c) in cfg.stage_channels.iter().enumerate() {
        h /= 2;
        w /= 2;
        total += conv(h, w, 3, r_in, c) + conv(h, w, 3, t_in, c);
        total += match cfg.fusion.at_stage(s, stages) {
            StageFusion::Add => 0,
            StageFusion::Concat => conv(h, w, 1, 2 * c, c),
            StageFusion::Dfm => cost_model(h as u64, w as u64, c as u64, c as u64, DFM_KERNEL as u64, Variant::Factorized, true),
        };
        r_in = c;
        t_in = c;
    }
    let mut c_in = *cfg.stage_channels.last().expect("validated");
    for s in (0..stages).rev() {
        h *= 2;
        w *= 2;
        let c_out = cfg.stage_channels[s.saturating_sub(1)];
        total += conv(h, w, 3, c_in, c_out);
        c_in = c_out;
    }
    total + conv(h, w, 1, c_in, cfg.classes)
}

/// Per-stage encoder features recorded during a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct StageTrace {
    pub rgb: Var,
    pub aux: Var,
    pub fused: Var,
}

/// Records the network on `tape` and returns the logits and stage traces.
/// `params` are tape variables in [`param_specs`] order.
pub fn forward(
    tape: &mut Tape,
    cfg: &NetConfig,
    params: &[Var],
    rgb: Var,
    aux: Var,
) -> Result<(Var, Vec<StageTrace>), NetError> {
    let expected_r = [cfg.height, cfg.width, 3];
    let expected_t = [cfg.height, cfg.width, cfg.modality.channels()];
    for (v, expected) in [(rgb, &expected_r), (aux, &expected_t)] {
        if tape.value(v).dims() != expected {
            return Err(NetError::InputSize {
                expected: expected.to_vec(),
                got: tape.value(v).dims().to_vec(),
            });
        }
    }
    let mut p = params.iter().copied();
    let mut next = || p.next().ok_or_else(|| NetError::Config("parameter list too short".into()));
    let stages = cfg.stage_channels.len();
    let (mut r, mut t) = (rgb, aux);
    let mut traces = Vec::with_capacity(stages);
    for (s, &c) in cfg.stage_channels.iter().enumerate() {
        let (rw, rb, tw, tb) = (next()?, next()?, next()?, next()?);
        let rc = tape.conv2d(r, rw, rb, 2, Padding::Same)?;
        let rs = tape.relu(rc)?;
        let tc = tape.conv2d(t, tw, tb, 2, Padding::Same)?;
        let ts = tape.relu(tc)?;
        let fused = match cfg.fusion.at_stage(s, stages) {
            StageFusion::Add => tape.add(rs, ts)?,
            StageFusion::Concat => {
                let (mw, mb) = (next()?, next()?);
                let cat = tape.concat(rs, ts)?;
                tape.conv2d(cat, mw, mb, 1, Padding::Same)?
            }
            StageFusion::Dfm => {
                let vars = DfmVars {
                    omega1_w: next()?,
                    omega1_b: next()?,
                    omega2_w: next()?,
                    omega2_b: next()?,
                    k: DFM_KERNEL,
                    c_in: c,
                    c_out: c,
                };
                dfm_on_tape(tape, rs, ts, &vars)?
            }
        };
        traces.push(StageTrace {
            rgb: rs,
            aux: ts,
            fused,
        });
        r = fused;
        t = ts;
    }
    let mut x = r;
    for _ in 0..stages {
        let (w, b) = (next()?, next()?);
        let up = tape.upsample2(x)?;
        let c = tape.conv2d(up, w, b, 1, Padding::Same)?;
        x = tape.relu(c)?;
    }
    let (hw, hb) = (next()?, next()?);
    let logits = tape.conv2d(x, hw, hb, 1, Padding::Same)?;
    Ok((logits, traces))
}
