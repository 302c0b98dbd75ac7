//! Dynamic fusion: per-pixel kernels generated from one modality (`f_t`)
//! and applied to another (`f_r`).
//!
//! The factorized form runs in two stages. A 3×3 convolution of `f_t`
//! generates a spatially variant channel-wise kernel, which filters `f_r`.
//! A pooled, fully connected projection of `f_t` generates a `C′×C` mixing
//! matrix, which is applied at every pixel. The naive form generates the
//! full `K×K×C×C′` kernel per pixel instead.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::tensor::ops::{self, Padding};
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Spatial size of the kernel-generating convolution.
pub const GENERATOR_SIZE: usize = 3;

/// Parameters of a factorized fusion layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DfmParams {
    /// `3×3×C×(K²·C)`.
    pub omega1_w: Tensor,
    /// `K²·C`.
    pub omega1_b: Tensor,
    /// `(C′·C)×C`.
    pub omega2_w: Tensor,
    /// `C′·C`.
    pub omega2_b: Tensor,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
}

fn odd(k: usize) -> Result<(), TensorError> {
    if k % 2 == 1 {
        Ok(())
    } else {
        Err(TensorError::InvalidShape {
            op: "dfm",
            message: format!("kernel size {k} must be odd"),
        })
    }
}

impl DfmParams {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Result<Self, TensorError> {
        odd(k)?;
        let g = GENERATOR_SIZE;
        Ok(Self {
            omega1_w: Tensor::zeros(&[g, g, c_in, k * k * c_in]),
            omega1_b: Tensor::zeros(&[k * k * c_in]),
            omega2_w: Tensor::zeros(&[c_out * c_in, c_in]),
            omega2_b: Tensor::zeros(&[c_out * c_in]),
            k,
            c_in,
            c_out,
        })
    }

    /// Zero weights with biases that make both stages pass `f_r` through:
    /// a one-hot centre tap per channel and an identity mixing matrix.
    pub fn identity(c: usize, k: usize) -> Result<Self, TensorError> {
        let mut p = Self::zeros(c, c, k)?;
        let centre = (k / 2) * k + k / 2;
        for ch in 0..c {
            p.omega1_b.data_mut()[centre * c + ch] = 1.0;
            p.omega2_b.data_mut()[ch * c + ch] = 1.0;
        }
        Ok(p)
    }

    /// Independent normal entries with standard deviation `scale`.
    pub fn random<R: Rng + ?Sized>(c_in: usize, c_out: usize, k: usize, scale: f64, rng: &mut R) -> Result<Self, TensorError> {
        let mut p = Self::zeros(c_in, c_out, k)?;
        let normal = Normal::new(0.0, scale).map_err(|e| TensorError::InvalidShape {
            op: "dfm",
            message: e.to_string(),
        })?;
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.omega1_w, &self.omega1_b, &self.omega2_w, &self.omega2_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.omega1_w, &mut self.omega1_b, &mut self.omega2_w, &mut self.omega2_b]
    }

    fn check_inputs(&self, f_r: &Tensor, f_t: &Tensor) -> Result<(), TensorError> {
        f_r.check_same("dfm", f_t)?;
        let (_, _, c) = f_r.hwc()?;
        if c != self.c_in {
            return Err(TensorError::ShapeMismatch {
                op: "dfm",
                expected: vec![self.c_in],
                got: vec![c],
            });
        }
        Ok(())
    }
}

/// Parameters of the naive generator: the same 3×3 convolution widened to
/// `K²·C·C′` outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NaiveParams {
    /// `3×3×C×(K²·C·C′)`.
    pub w: Tensor,
    pub b: Tensor,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl NaiveParams {
    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Result<Self, TensorError> {
        odd(k)?;
        let n = k * k * c_in * c_out;
        let g = GENERATOR_SIZE;
        Ok(Self {
            w: Tensor::zeros(&[g, g, c_in, n]),
            b: Tensor::zeros(&[n]),
            k,
            c_in,
            c_out,
        })
    }

    /// Naive generator whose per-pixel kernel equals `W2[co, ci] · W1(p)[tap, ci]`
    /// for the factorized parameters evaluated on this `f_t`.
    pub fn factorized_family(params: &DfmParams, f_t: &Tensor) -> Result<Self, TensorError> {
        let (c, co_n, k) = (params.c_in, params.c_out, params.k);
        let w2 = generate_w2(f_t, params)?;
        let mut out = Self::zeros(c, co_n, k)?;
        let g = GENERATOR_SIZE;
        let w1_out = k * k * c;
        let naive_out = w1_out * co_n;
        for tap in 0..k * k {
            for ci in 0..c {
                for co in 0..co_n {
                    let m = w2.data()[co * c + ci];
                    let src = tap * c + ci;
                    let dst = src * co_n + co;
                    out.b.data_mut()[dst] = m * params.omega1_b.data()[src];
                    for gi in 0..g * g * c {
                        out.w.data_mut()[gi * naive_out + dst] = m * params.omega1_w.data()[gi * w1_out + src];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Channel-wise dynamic kernel `W1 = conv(f_t)`, dims `H×W×(K²·C)`.
pub fn generate_w1(f_t: &Tensor, params: &DfmParams) -> Result<Tensor, TensorError> {
    ops::conv2d(f_t, &params.omega1_w, &params.omega1_b, 1, Padding::Same)
}

/// Cross-channel dynamic kernel `W2 = FC(avgpool(f_t))`, dims `C′×C`.
pub fn generate_w2(f_t: &Tensor, params: &DfmParams) -> Result<Tensor, TensorError> {
    let pooled = ops::avg_pool_global(f_t)?;
    ops::fully_connected(&pooled, &params.omega2_w, &params.omega2_b)?.reshape(&[params.c_out, params.c_in])
}

/// Spatially variant channel-wise filtering of `f_r` by `W1`.
pub fn dfm_stage1(f_r: &Tensor, f_t: &Tensor, params: &DfmParams) -> Result<(Tensor, Tensor), TensorError> {
    params.check_inputs(f_r, f_t)?;
    let w1 = generate_w1(f_t, params)?;
    Ok((ops::channelwise_dynamic(f_r, &w1, params.k)?, w1))
}

/// Per-pixel application of `W2` to the stage-one output.
pub fn dfm_stage2(f_f_prime: &Tensor, f_t: &Tensor, params: &DfmParams) -> Result<(Tensor, Tensor), TensorError> {
    let w2 = generate_w2(f_t, params)?;
    Ok((ops::cross_channel(f_f_prime, &w2, params.c_out)?, w2))
}

/// Residual factorized fusion: `f_r + stage2(stage1(f_r, f_t))`.
pub fn dfm_forward(f_r: &Tensor, f_t: &Tensor, params: &DfmParams) -> Result<Tensor, TensorError> {
    if params.c_in != params.c_out {
        return Err(TensorError::InvalidShape {
            op: "dfm_forward",
            message: format!("residual needs C == C′, got {} and {}", params.c_in, params.c_out),
        });
    }
    let (fp, _) = dfm_stage1(f_r, f_t, params)?;
    let (ff, _) = dfm_stage2(&fp, f_t, params)?;
    f_r.add(&ff)
}

/// Full per-pixel cross-channel dynamic convolution, no residual.
pub fn dfm_naive_forward(f_r: &Tensor, f_t: &Tensor, params: &NaiveParams) -> Result<Tensor, TensorError> {
    f_r.check_same("dfm_naive_forward", f_t)?;
    let kern = ops::conv2d(f_t, &params.w, &params.b, 1, Padding::Same)?;
    ops::dynamic_full(f_r, &kern, params.k, params.c_out)
}

/// Tape handles for one fusion layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct DfmVars {
    pub omega1_w: Var,
    pub omega1_b: Var,
    pub omega2_w: Var,
    pub omega2_b: Var,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl DfmVars {
    pub fn record(tape: &mut Tape, params: &DfmParams) -> Self {
        Self {
            omega1_w: tape.leaf(params.omega1_w.clone()),
            omega1_b: tape.leaf(params.omega1_b.clone()),
            omega2_w: tape.leaf(params.omega2_w.clone()),
            omega2_b: tape.leaf(params.omega2_b.clone()),
            k: params.k,
            c_in: params.c_in,
            c_out: params.c_out,
        }
    }

    pub fn vars(&self) -> [Var; 4] {
        [self.omega1_w, self.omega1_b, self.omega2_w, self.omega2_b]
    }
}

/// Records the residual factorized fusion on `tape`.
pub fn dfm_on_tape(tape: &mut Tape, f_r: Var, f_t: Var, p: &DfmVars) -> Result<Var, TensorError> {
    if p.c_in != p.c_out {
        return Err(TensorError::InvalidShape {
            op: "dfm_forward",
            message: format!("residual needs C == C′, got {} and {}", p.c_in, p.c_out),
        });
    }
    tape.value(f_r).check_same("dfm", tape.value(f_t))?;
    let w1 = tape.conv2d(f_t, p.omega1_w, p.omega1_b, 1, Padding::Same)?;
    let fp = tape.channelwise_dynamic(f_r, w1, p.k)?;
    let pooled = tape.avg_pool_global(f_t)?;
    let w2 = tape.fully_connected(pooled, p.omega2_w, p.omega2_b)?;
    let ff = tape.cross_channel(fp, w2, p.c_out)?;
    tape.add(f_r, ff)
}

/// Gradients of one fusion layer's inputs and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DfmGrads {
    pub f_r: Tensor,
    pub f_t: Tensor,
    pub omega1_w: Tensor,
    pub omega1_b: Tensor,
    pub omega2_w: Tensor,
    pub omega2_b: Tensor,
}

/// A fusion layer that remembers its last forward pass.
#[derive(Debug)]
pub struct DfmLayer {
    pub params: DfmParams,
    recorded: Option<(Tape, Var, Var, DfmVars, Var)>,
}

impl DfmLayer {
    pub fn new(params: DfmParams) -> Self {
        Self { params, recorded: None }
    }

    pub fn forward(&mut self, f_r: &Tensor, f_t: &Tensor) -> Result<Tensor, TensorError> {
        self.params.check_inputs(f_r, f_t)?;
        let mut tape = Tape::new();
        let r = tape.leaf(f_r.clone());
        let t = tape.leaf(f_t.clone());
        let vars = DfmVars::record(&mut tape, &self.params);
        let out = dfm_on_tape(&mut tape, r, t, &vars)?;
        let value = tape.value(out).clone();
        self.recorded = Some((tape, r, t, vars, out));
        Ok(value)
    }

    pub fn backward(&mut self, upstream: &Tensor) -> Result<DfmGrads, TensorError> {
        let (tape, r, t, vars, out) = self.recorded.as_mut().ok_or(TensorError::BackwardBeforeForward)?;
        tape.zero_grads();
        tape.backward_with(*out, upstream.clone())?;
        let grad = |v: Var| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(v).dims()));
        Ok(DfmGrads {
            f_r: grad(*r),
            f_t: grad(*t),
            omega1_w: grad(vars.omega1_w),
            omega1_b: grad(vars.omega1_b),
            omega2_w: grad(vars.omega2_w),
            omega2_b: grad(vars.omega2_b),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Naive,
    Factorized,
}

/// Multiply-accumulate count of one fusion layer.
///
/// Application: naive `H·W·K²·C·C′`, factorized `H·W·K²·C + H·W·C·C′`.
/// Generation adds the 3×3 kernel-generating convolution and, for the
/// factorized form, the fully connected layer (`C·C′·C`).
pub fn cost_model(h: u64, w: u64, c: u64, c_out: u64, k: u64, variant: Variant, include_generation: bool) -> u64 {
    let g = (GENERATOR_SIZE * GENERATOR_SIZE) as u64;
    let hw = h * w;
    match variant {
        Variant::Naive => {
            let apply = hw * k * k * c * c_out;
            apply + if include_generation { hw * g * c * k * k * c * c_out } else { 0 }
        }
        Variant::Factorized => {
            let apply = hw * k * k * c + hw * c * c_out;
            apply + if include_generation { hw * g * c * k * k * c + c * c_out * c } else { 0 }
        }
    }
}

/// Per-pixel channel mean, min-max scaled to `[0, 1]`. A constant map
/// scales to all zeros.
pub fn mean_activation_map(f: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, c) = f.hwc()?;
    if c == 0 {
        return Err(TensorError::InvalidShape {
            op: "mean_activation_map",
            message: "no channels".into(),
        });
    }
    let means: Vec<f64> = f.data().chunks_exact(c).map(|px| px.iter().sum::<f64>() / c as f64).collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let data = means
        .iter()
        .map(|m| if range > 0.0 { (m - lo) / range } else { 0.0 })
        .collect();
    Tensor::from_vec(&[h, w, 1], data)
}

/// Largest relative error per gradient group, analytic against central
/// differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub f_r: f64,
    pub f_t: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl GradcheckReport {
    pub fn max(&self) -> f64 {
        self.f_r.max(self.f_t).max(self.omega1).max(self.omega2)
    }
}

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks the layer's analytic gradients of `Σ upstream ⊙ dfm_forward`
/// against central differences on random `h×w×c` inputs.
pub fn gradcheck<R: Rng + ?Sized>(h: usize, w: usize, c: usize, k: usize, rng: &mut R) -> Result<GradcheckReport, TensorError> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut sample = |dims: &[usize]| {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| normal.sample(rng)).collect()).expect("dims match")
    };
    let f_r = sample(&[h, w, c]);
    let f_t = sample(&[h, w, c]);
    let upstream = sample(&[h, w, c]);
    let params = DfmParams::random(c, c, k, 0.3, rng)?;

    let mut layer = DfmLayer::new(params.clone());
    layer.forward(&f_r, &f_t)?;
    let g = layer.backward(&upstream)?;

    let loss = |fr: &Tensor, ft: &Tensor, p: &DfmParams| -> Result<f64, TensorError> { dfm_forward(fr, ft, p)?.dot(&upstream) };
    let check = |analytic: &Tensor, perturb: &mut dyn FnMut(usize, f64) -> Result<f64, TensorError>| -> Result<f64, TensorError> {
        let mut worst = 0.0f64;
        for (i, &a) in analytic.data().iter().enumerate() {
            let plus = perturb(i, GRADCHECK_STEP)?;
            let minus = perturb(i, -GRADCHECK_STEP)?;
            worst = worst.max(relative_error(a, (plus - minus) / (2.0 * GRADCHECK_STEP)));
        }
        Ok(worst)
    };

    let f_r_err = check(&g.f_r, &mut |i, h| {
        let mut x = f_r.clone();
        x.data_mut()[i] += h;
        loss(&x, &f_t, &params)
    })?;
    let f_t_err = check(&g.f_t, &mut |i, h| {
        let mut x = f_t.clone();
        x.data_mut()[i] += h;
        loss(&f_r, &x, &params)
    })?;
    let mut param_err = [0.0f64; 4];
    let grads = [&g.omega1_w, &g.omega1_b, &g.omega2_w, &g.omega2_b];
    for (slot, (err, analytic)) in param_err.iter_mut().zip(grads).enumerate() {
        *err = check(analytic, &mut |i, h| {
            let mut p = params.clone();
            p.tensors_mut()[slot].data_mut()[i] += h;
            loss(&f_r, &f_t, &p)
        })?;
    }
    Ok(GradcheckReport {
        f_r: f_r_err,
        f_t: f_t_err,
        omega1: param_err[0].max(param_err[1]),
        omega2: param_err[2].max(param_err[3]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_init_doubles_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f_r = random(&[5, 4, 3], &mut rng);
        let f_t = random(&[5, 4, 3], &mut rng);
        let out = dfm_forward(&f_r, &f_t, &DfmParams::identity(3, 3).unwrap()).unwrap();
        assert!(out.max_abs_diff(&f_r.scale(2.0)) < 1e-12);
    }

    #[test]
    fn zero_params_pass_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f_r = random(&[4, 4, 2], &mut rng);
        let f_t = random(&[4, 4, 2], &mut rng);
        let out = dfm_forward(&f_r, &f_t, &DfmParams::zeros(2, 2, 3).unwrap()).unwrap();
        assert_eq!(out, f_r);
    }

    #[test]
    fn uniform_w1_is_box_blur() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f_r = random(&[5, 5, 2], &mut rng);
        let mut p = DfmParams::zeros(2, 2, 3).unwrap();
        p.omega1_b.data_mut().iter_mut().for_each(|v| *v = 1.0 / 9.0);
        let (fp, _) = dfm_stage1(&f_r, &f_r, &p).unwrap();
        let blur = Tensor::from_fn3(5, 5, 2, |y, x, c| {
            let mut s = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (sy, sx) = (y as isize + dy, x as isize + dx);
                    if (0..5).contains(&sy) && (0..5).contains(&sx) {
                        s += f_r.at3(sy as usize, sx as usize, c);
                    }
                }
            }
            s / 9.0
        });
        assert!(fp.max_abs_diff(&blur) < 1e-15);
    }

    #[test]
    fn doubled_w2_doubles_stage_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[3, 3, 2], &mut rng);
        let mut p = DfmParams::identity(2, 3).unwrap();
        p.omega2_b = p.omega2_b.scale(2.0);
        let (ff, w2) = dfm_stage2(&x, &x, &p).unwrap();
        assert_eq!(w2.data(), &[2.0, 0.0, 0.0, 2.0]);
        assert_eq!(ff, x.scale(2.0));
    }

    #[test]
    fn pointwise_naive_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f_r = random(&[3, 4, 1], &mut rng);
        let f_t = random(&[3, 4, 1], &mut rng);
        let mut p = NaiveParams::zeros(1, 1, 1).unwrap();
        p.w.data_mut()[4] = 1.5;
        p.b.data_mut()[0] = 0.25;
        let out = dfm_naive_forward(&f_r, &f_t, &p).unwrap();
        for (i, &o) in out.data().iter().enumerate() {
            let w = 1.5 * f_t.data()[i] + 0.25;
            assert!((o - w * f_r.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn naive_with_delta_kernels_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f_r = random(&[4, 4, 2], &mut rng);
        let f_t = random(&[4, 4, 2], &mut rng);
        let naive = NaiveParams::factorized_family(&DfmParams::identity(2, 3).unwrap(), &f_t).unwrap();
        assert!(dfm_naive_forward(&f_r, &f_t, &naive).unwrap().max_abs_diff(&f_r) < 1e-15);
    }

    #[test]
    fn factorized_family_matches_stages() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f_r = random(&[5, 4, 3], &mut rng);
        let f_t = random(&[5, 4, 3], &mut rng);
        let p = DfmParams::random(3, 3, 3, 0.4, &mut rng).unwrap();
        let (fp, _) = dfm_stage1(&f_r, &f_t, &p).unwrap();
        let (ff, _) = dfm_stage2(&fp, &f_t, &p).unwrap();
        let naive = NaiveParams::factorized_family(&p, &f_t).unwrap();
        assert!(dfm_naive_forward(&f_r, &f_t, &naive).unwrap().max_abs_diff(&ff) < 1e-9);
    }

    #[test]
    fn residual_needs_matching_channels() {
        let p = DfmParams::zeros(2, 3, 3).unwrap();
        let x = Tensor::zeros(&[2, 2, 2]);
        assert!(dfm_forward(&x, &x, &p).is_err());
        assert!(DfmParams::zeros(2, 2, 2).is_err());
    }

    #[test]
    fn layer_backward_before_forward() {
        let mut layer = DfmLayer::new(DfmParams::identity(2, 3).unwrap());
        assert_eq!(layer.backward(&Tensor::zeros(&[2, 2, 2])), Err(TensorError::BackwardBeforeForward));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut layer = DfmLayer::new(DfmParams::random(2, 2, 3, 0.5, &mut rng).unwrap());
        let x = random(&[4, 4, 2], &mut rng);
        layer.forward(&x, &x.scale(-0.5)).unwrap();
        let g = layer.backward(&Tensor::zeros(&[4, 4, 2])).unwrap();
        for t in [&g.f_r, &g.f_t, &g.omega1_w, &g.omega1_b, &g.omega2_w, &g.omega2_b] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let report = gradcheck(4, 4, 2, 3, &mut rng).unwrap();
        assert!(report.max() < 1e-4, "{report:?}");
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost_model(8, 8, 16, 16, 3, Variant::Naive, false), 147_456);
        assert_eq!(cost_model(8, 8, 16, 16, 3, Variant::Factorized, false), 25_600);
        let naive = cost_model(5, 7, 4, 1, 1, Variant::Naive, false);
        assert_eq!(cost_model(5, 7, 4, 1, 1, Variant::Factorized, false), naive + 5 * 7 * 4);
    }

    #[test]
    fn activation_map_scaling() {
        assert!(mean_activation_map(&Tensor::filled(&[3, 3, 4], 2.5))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let x = Tensor::from_vec(&[1, 3, 1], vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(mean_activation_map(&x).unwrap().data(), &[0.0, 1.0, 0.5]);
    }
}
