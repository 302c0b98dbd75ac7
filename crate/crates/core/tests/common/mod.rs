//! Loop-level reference implementations shared by integration tests. Each
//! counts the multiply-accumulates it performs, padded taps included.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadfuse::dfm::{DfmParams, NaiveParams, GENERATOR_SIZE};
use roadfuse::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn padded(x: &Tensor, y: isize, xx: isize, c: usize) -> f64 {
    let (h, w) = (x.dims()[0] as isize, x.dims()[1] as isize);
    if y < 0 || xx < 0 || y >= h || xx >= w {
        0.0
    } else {
        x.at3(y as usize, xx as usize, c)
    }
}

/// Same-padded stride-1 convolution with `[kh, kw, cin, cout]` weights.
pub fn conv_same(x: &Tensor, w: &Tensor, b: &Tensor, macs: &mut u64) -> Tensor {
    let (h, wd, cin) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let (kh, kw, cout) = (w.dims()[0], w.dims()[1], w.dims()[3]);
    let mut out = Tensor::zeros(&[h, wd, cout]);
    for y in 0..h {
        for xx in 0..wd {
            for co in 0..cout {
                let mut acc = b.data()[co];
                for i in 0..kh {
                    for j in 0..kw {
                        for ci in 0..cin {
                            let sy = y as isize + i as isize - (kh / 2) as isize;
                            let sx = xx as isize + j as isize - (kw / 2) as isize;
                            acc += w.data()[((i * kw + j) * cin + ci) * cout + co] * padded(x, sy, sx, ci);
                            *macs += 1;
                        }
                    }
                }
                out.set3(y, xx, co, acc);
            }
        }
    }
    out
}

/// Channel-wise filtering of `f_r` by per-pixel kernels `w1` (`H×W×K²C`).
pub fn stage1(f_r: &Tensor, w1: &Tensor, k: usize, macs: &mut u64) -> Tensor {
    let (h, w, c) = (f_r.dims()[0], f_r.dims()[1], f_r.dims()[2]);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[h, w, c]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        let wgt = w1.at3(y, x, (i * k + j) * c + ch);
                        acc += wgt * padded(f_r, y as isize + i as isize - r, x as isize + j as isize - r, ch);
                        *macs += 1;
                    }
                }
                out.set3(y, x, ch, acc);
            }
        }
    }
    out
}

/// Mixing matrix `C′×C` from the pooled `f_t`, as `Vec` rows.
pub fn mixing_matrix(f_t: &Tensor, p: &DfmParams) -> Vec<Vec<f64>> {
    let (h, w, c) = (f_t.dims()[0], f_t.dims()[1], f_t.dims()[2]);
    let mut pooled = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            for (ch, v) in pooled.iter_mut().enumerate() {
                *v += f_t.at3(y, x, ch);
            }
        }
    }
    pooled.iter_mut().for_each(|v| *v /= (h * w) as f64);
    (0..p.c_out)
        .map(|co| {
            (0..c)
                .map(|ci| {
                    let row = co * c + ci;
                    p.omega2_b.data()[row] + (0..c).map(|n| p.omega2_w.data()[row * c + n] * pooled[n]).sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// `out(p) = M · x(p)` at every pixel.
pub fn stage2(x: &Tensor, m: &[Vec<f64>], macs: &mut u64) -> Tensor {
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut out = Tensor::zeros(&[h, w, m.len()]);
    for y in 0..h {
        for xx in 0..w {
            for (co, row) in m.iter().enumerate() {
                let mut acc = 0.0;
                for (ci, &wt) in row.iter().enumerate().take(c) {
                    acc += wt * x.at3(y, xx, ci);
                    *macs += 1;
                }
                out.set3(y, xx, co, acc);
            }
        }
    }
    out
}

/// Full per-pixel `K×K×C×C′` kernel application (`kern` is `H×W×K²CC′`).
pub fn naive_apply(f_r: &Tensor, kern: &Tensor, k: usize, c_out: usize, macs: &mut u64) -> Tensor {
    let (h, w, c) = (f_r.dims()[0], f_r.dims()[1], f_r.dims()[2]);
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&[h, w, c_out]);
    for y in 0..h {
        for x in 0..w {
            for co in 0..c_out {
                let mut acc = 0.0;
                for i in 0..k {
                    for j in 0..k {
                        for ci in 0..c {
                            let wgt = kern.at3(y, x, (((i * k + j) * c) + ci) * c_out + co);
                            acc += wgt * padded(f_r, y as isize + i as isize - r, x as isize + j as isize - r, ci);
                            *macs += 1;
                        }
                    }
                }
                out.set3(y, x, co, acc);
            }
        }
    }
    out
}

pub struct Counted<T> {
    pub value: T,
    pub apply_macs: u64,
    pub generation_macs: u64,
}

pub fn factorized(f_r: &Tensor, f_t: &Tensor, p: &DfmParams) -> Counted<(Tensor, Tensor)> {
    let mut generation_macs = 0;
    let mut apply_macs = 0;
    let w1 = conv_same(f_t, &p.omega1_w, &p.omega1_b, &mut generation_macs);
    let s1 = stage1(f_r, &w1, p.k, &mut apply_macs);
    let m = mixing_matrix(f_t, p);
    generation_macs += (p.c_out * p.c_in * p.c_in) as u64;
    let s2 = stage2(&s1, &m, &mut apply_macs);
    Counted {
        value: (s1, s2),
        apply_macs,
        generation_macs,
    }
}

pub fn naive(f_r: &Tensor, f_t: &Tensor, p: &NaiveParams) -> Counted<Tensor> {
    let mut generation_macs = 0;
    let mut apply_macs = 0;
    let kern = conv_same(f_t, &p.w, &p.b, &mut generation_macs);
    let value = naive_apply(f_r, &kern, p.k, p.c_out, &mut apply_macs);
    Counted {
        value,
        apply_macs,
        generation_macs,
    }
}

pub fn random_naive(c: usize, c_out: usize, k: usize, rng: &mut ChaCha8Rng) -> NaiveParams {
    let mut p = NaiveParams::zeros(c, c_out, k).unwrap();
    let n = k * k * c * c_out;
    p.w = random(&[GENERATOR_SIZE, GENERATOR_SIZE, c, n], rng).scale(0.3);
    p.b = random(&[n], rng).scale(0.3);
    p
}

/// All-points interpolated AP by rescanning every pixel at every distinct
/// threshold.
pub fn brute_force_ap(scores: &[f64], gt: &[u8], class: u8) -> f64 {
    let counted: Vec<(f64, bool)> = scores
        .iter()
        .zip(gt)
        .filter(|(_, &g)| g != 0)
        .map(|(&s, &g)| (s, g == class))
        .collect();
    let positives = counted.iter().filter(|c| c.1).count() as f64;
    let mut thresholds: Vec<f64> = counted.iter().map(|c| c.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pr: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = counted.iter().filter(|c| c.0 >= t && c.1).count() as f64;
            let fp = counted.iter().filter(|c| c.0 >= t && !c.1).count() as f64;
            (tp / (tp + fp), tp / positives)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for &(_, r) in &pr {
        let best = pr.iter().filter(|q| q.1 >= r).map(|q| q.0).fold(0.0, f64::max);
        ap += (r - prev) * best;
        prev = r;
    }
    ap
}
