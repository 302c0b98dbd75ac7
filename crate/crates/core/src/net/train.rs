use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, init_params, param_specs, ClassWeighting, Dataset, NetConfig, NetError, Sample, NUM_CLASSES};
use crate::io::{self, LabelImage, LABEL_ANOMALY, LABEL_DRIVABLE, LABEL_UNLABELED};
use crate::metrics::{confusion_slices, pr_curve, ConfusionCounts, EvalReport, MetricsError, PrCurve, EVAL_CLASSES};
use crate::tensor::{ops, Sgd, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: NetConfig,
    /// Parameters of the best validation checkpoint, in [`param_specs`] order.
    pub params: Vec<Tensor>,
    /// Mean training loss of every iteration.
    pub loss_curve: Vec<f64>,
    pub val_miou: f64,
    pub best_iteration: usize,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: NetConfig,
    val_miou: f64,
    best_iteration: usize,
    loss_curve: Vec<f64>,
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut p = model.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

impl TrainedModel {
    /// Writes every parameter, flattened in order, as one rank-1 TNSR file,
    /// and the config and training record to `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<(), NetError> {
        let flat: Vec<f64> = self.params.iter().flat_map(|t| t.data().iter().copied()).collect();
        let n = flat.len();
        io::write_tensor(&Tensor::from_vec(&[n], flat)?, path)?;
        let sidecar = Sidecar {
            config: self.config.clone(),
            val_miou: self.val_miou,
            best_iteration: self.best_iteration,
            loss_curve: self.loss_curve.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        let side = sidecar_path(path);
        std::fs::write(&side, json).map_err(|source| NetError::File { path: side, source })
    }

    pub fn load(path: &Path) -> Result<Self, NetError> {
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| NetError::File {
            path: side.clone(),
            source,
        })?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|source| NetError::Json { path: side, source })?;
        sidecar.config.validate()?;
        let flat = io::read_tensor(path)?;
        let specs = param_specs(&sidecar.config);
        let expected: usize = specs.iter().map(|s| s.dims.iter().product::<usize>()).sum();
        if flat.len() != expected {
            return Err(NetError::Config(format!(
                "model file holds {} values, config needs {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut params = Vec::with_capacity(specs.len());
        for s in &specs {
            let n: usize = s.dims.iter().product();
            params.push(Tensor::from_vec(&s.dims, flat.data()[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(Self {
            config: sidecar.config,
            params,
            loss_curve: sidecar.loss_curve,
            val_miou: sidecar.val_miou,
            best_iteration: sidecar.best_iteration,
        })
    }
}

/// Per-class cross-entropy weights. Inverse frequency over the labeled
/// training pixels, normalized so a balanced set gets weight 1; the
/// unlabeled class always gets 0.
pub fn class_weights(cfg: &NetConfig, samples: &[Sample]) -> [f64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for s in samples {
        for &l in &s.labels {
            counts[l as usize] += 1;
        }
    }
    let mut w = [0.0, 1.0, 1.0];
    if cfg.class_weighting == ClassWeighting::InverseFrequency {
        let labeled = (counts[LABEL_DRIVABLE as usize] + counts[LABEL_ANOMALY as usize]) as f64;
        for c in [LABEL_DRIVABLE, LABEL_ANOMALY] {
            let n = counts[c as usize];
            if n > 0 {
                w[c as usize] = labeled / (2.0 * n as f64);
            }
        }
    }
    w[LABEL_UNLABELED as usize] = 0.0;
    w
}

fn leaves(tape: &mut Tape, params: &[Tensor]) -> Vec<Var> {
    params.iter().map(|p| tape.leaf(p.clone())).collect()
}

fn logits(cfg: &NetConfig, params: &[Tensor], sample: &Sample) -> Result<Tensor, NetError> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let r = tape.leaf(sample.rgb.clone());
    let t = tape.leaf(sample.aux.clone());
    let (out, _) = forward(&mut tape, cfg, &vars, r, t)?;
    Ok(tape.value(out).clone())
}

/// Loss and parameter gradients for one sample.
pub fn loss_and_grads(
    cfg: &NetConfig,
    params: &[Tensor],
    sample: &Sample,
    weights: &[f64],
) -> Result<(f64, Vec<Tensor>), NetError> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, params);
    let r = tape.leaf(sample.rgb.clone());
    let t = tape.leaf(sample.aux.clone());
    let (out, _) = forward(&mut tape, cfg, &vars, r, t)?;
    let loss = tape.softmax_ce(out, &sample.labels, weights, Some(LABEL_UNLABELED))?;
    tape.backward(loss)?;
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).dims())))
        .collect();
    Ok((tape.value(loss).data()[0], grads))
}

/// Rescales `grads` so their joint L2 norm is at most `max`.
pub fn clip_global_norm(grads: &mut [Tensor], max: f64) {
    let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn miou(counts: &ConfusionCounts) -> f64 {
    EvalReport::from_counts(counts, None).miou
}

fn val_miou(cfg: &NetConfig, params: &[Tensor], samples: &[Sample]) -> Result<f64, NetError> {
    let mut counts = ConfusionCounts::default();
    for s in samples {
        let inf = infer(cfg, params, s)?;
        counts.merge(&confusion_slices(inf.labels.labels(), &s.labels)?);
    }
    Ok(miou(&counts))
}

/// SGD training from a seeded initialization. Validation mIoU is measured
/// every `eval_every` iterations and after the last one; the best
/// checkpoint is kept (earliest on ties).
pub fn train(cfg: &NetConfig, data: &Dataset) -> Result<TrainedModel, NetError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(NetError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(NetError::EmptySplit("val"));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = init_params(cfg, &mut init_rng);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(1);
    let weights = class_weights(cfg, &data.train);
    debug!("class weights {weights:?}");
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for it in 1..=cfg.iterations {
        let mut sum_grads: Option<Vec<Tensor>> = None;
        let mut loss_sum = 0.0;
        for _ in 0..cfg.batch_size {
            let sample = &data.train[order_rng.random_range(0..data.train.len())];
            let (loss, grads) = match loss_and_grads(cfg, &params, sample, &weights) {
                Ok(v) => v,
                Err(NetError::Tensor(TensorError::NonFinite { .. })) => {
                    return Err(NetError::Diverged {
                        iteration: it,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(NetError::Diverged { iteration: it, loss });
            }
            loss_sum += loss;
            match &mut sum_grads {
                None => sum_grads = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        *a = a.add(g)?;
                    }
                }
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        let mut grads: Vec<Tensor> = sum_grads.expect("batch is non-empty").iter().map(|g| g.scale(scale)).collect();
        if let Some(max) = cfg.clip_norm {
            clip_global_norm(&mut grads, max);
        }
        opt.step(&mut params, &grads)?;
        let loss = loss_sum * scale;
        loss_curve.push(loss);

        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let score = val_miou(cfg, &params, &data.val)?;
            info!("iteration {it}: loss {loss:.4}, val mIoU {score:.4}");
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, it, params.clone()));
            }
        }
    }
    let (val_miou, best_iteration, params) = match best {
        Some(b) => b,
        None => (val_miou(cfg, &params, &data.val)?, 0, params),
    };
    Ok(TrainedModel {
        config: cfg.clone(),
        params,
        loss_curve,
        val_miou,
        best_iteration,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub labels: LabelImage,
    /// `H×W×3` softmax probabilities.
    pub probs: Tensor,
}

/// Softmax probabilities and their per-pixel argmax.
pub fn infer(cfg: &NetConfig, params: &[Tensor], sample: &Sample) -> Result<Inference, NetError> {
    let probs = ops::softmax(&logits(cfg, params, sample)?)?;
    let labels = probs
        .data()
        .chunks_exact(NUM_CLASSES)
        .map(|p| {
            let mut best = 0;
            for k in 1..NUM_CLASSES {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    Ok(Inference {
        labels: LabelImage::new(cfg.width, cfg.height, labels)?,
        probs,
    })
}

/// Pixel-pooled scores over `samples`, with PR curves for every task class
/// present in the ground truth.
pub fn evaluate(cfg: &NetConfig, params: &[Tensor], samples: &[Sample]) -> Result<(EvalReport, Vec<(u8, PrCurve)>), NetError> {
    if samples.is_empty() {
        return Err(NetError::EmptySplit("evaluation"));
    }
    let mut counts = ConfusionCounts::default();
    let mut scores: Vec<Vec<f64>> = vec![Vec::new(); NUM_CLASSES];
    let mut gt = Vec::new();
    for s in samples {
        let inf = infer(cfg, params, s)?;
        counts.merge(&confusion_slices(inf.labels.labels(), &s.labels)?);
        for px in inf.probs.data().chunks_exact(NUM_CLASSES) {
            for (k, &p) in px.iter().enumerate() {
                scores[k].push(p.clamp(0.0, 1.0));
            }
        }
        gt.extend_from_slice(&s.labels);
    }
    let mut curves = Vec::new();
    for class in EVAL_CLASSES {
        match pr_curve(&scores[class as usize], &gt, class) {
            Ok(c) => curves.push((class, c)),
            Err(MetricsError::ClassAbsent(_)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    let aps: Vec<(u8, f64)> = curves.iter().map(|(c, k)| (*c, k.ap)).collect();
    Ok((EvalReport::from_counts(&counts, Some(&aps)), curves))
}
