//! Forward and backward kernels. Every backward function takes the upstream
//! gradient of the op's output and returns gradients for its inputs.

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `(k - 1) / 2` on each side.
    Same,
    Valid,
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad_y: usize,
    pad_x: usize,
    ho: usize,
    wo: usize,
}

fn conv_geom(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<ConvGeom, TensorError> {
    let (h, wd, cin) = x.hwc()?;
    let [kh, kw, kcin, cout] = w.dims()[..] else {
        return Err(TensorError::InvalidShape {
            op: "conv2d",
            message: format!("kernel must be rank 4, got {:?}", w.dims()),
        });
    };
    if kcin != cin {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![kh, kw, cin, cout],
            got: w.dims().to_vec(),
        });
    }
    if b.dims() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            expected: vec![cout],
            got: b.dims().to_vec(),
        });
    }
    if stride == 0 {
        return Err(TensorError::InvalidShape {
            op: "conv2d",
            message: "stride must be positive".into(),
        });
    }
    let (pad_y, pad_x) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        Padding::Valid => (0, 0),
    };
    if h + 2 * pad_y < kh || wd + 2 * pad_x < kw {
        return Err(TensorError::InvalidShape {
            op: "conv2d",
            message: format!("kernel {kh}x{kw} larger than padded input {h}x{wd}"),
        });
    }
    let ho = (h + 2 * pad_y - kh) / stride + 1;
    let wo = (wd + 2 * pad_x - kw) / stride + 1;
    Ok(ConvGeom {
        h,
        w: wd,
        cin,
        kh,
        kw,
        cout,
        stride,
        pad_y,
        pad_x,
        ho,
        wo,
    })
}

impl ConvGeom {
    /// Input pixel under kernel tap `(i, j)` for output pixel `(y, x)`.
    #[inline]
    fn source(&self, y: usize, x: usize, i: usize, j: usize) -> Option<(usize, usize)> {
        let sy = (y * self.stride + i).checked_sub(self.pad_y)?;
        let sx = (x * self.stride + j).checked_sub(self.pad_x)?;
        (sy < self.h && sx < self.w).then_some((sy, sx))
    }
}

/// Cross-correlation of `x` (`H×W×Cin`) with `w` (`Kh×Kw×Cin×Cout`) plus bias.
pub fn conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, padding: Padding) -> Result<Tensor, TensorError> {
    let g = conv_geom(x, w, b, stride, padding)?;
    let mut out = Tensor::zeros(&[g.ho, g.wo, g.cout]);
    let (xd, wdat, od) = (x.data(), w.data(), out.data_mut());
    for y in 0..g.ho {
        for xo in 0..g.wo {
            let o = &mut od[(y * g.wo + xo) * g.cout..][..g.cout];
            o.copy_from_slice(b.data());
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let Some((sy, sx)) = g.source(y, xo, i, j) else {
                        continue;
                    };
                    let src = &xd[(sy * g.w + sx) * g.cin..][..g.cin];
                    let taps = &wdat[(i * g.kw + j) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &xv) in src.iter().enumerate() {
                        let row = &taps[ci * g.cout..][..g.cout];
                        for (acc, &wv) in o.iter_mut().zip(row) {
                            *acc += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to `(x, w, b)`.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: Padding,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let g = conv_geom(x, w, b, stride, padding)?;
    if gout.dims() != [g.ho, g.wo, g.cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            expected: vec![g.ho, g.wo, g.cout],
            got: gout.dims().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(x.dims());
    let mut gw = Tensor::zeros(w.dims());
    let mut gb = Tensor::zeros(b.dims());
    let (xd, wdat, gd) = (x.data(), w.data(), gout.data());
    for y in 0..g.ho {
        for xo in 0..g.wo {
            let go = &gd[(y * g.wo + xo) * g.cout..][..g.cout];
            for (acc, &v) in gb.data_mut().iter_mut().zip(go) {
                *acc += v;
            }
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let Some((sy, sx)) = g.source(y, xo, i, j) else {
                        continue;
                    };
                    let base = (sy * g.w + sx) * g.cin;
                    let tap = (i * g.kw + j) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let xv = xd[base + ci];
                        let wrow = &wdat[tap + ci * g.cout..][..g.cout];
                        let gwrow = &mut gw.data_mut()[tap + ci * g.cout..][..g.cout];
                        let mut acc = 0.0;
                        for co in 0..g.cout {
                            gwrow[co] += xv * go[co];
                            acc += wrow[co] * go[co];
                        }
                        gx.data_mut()[base + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Per-channel mean over all pixels, as a `1×1×C` tensor.
pub fn avg_pool_global(x: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, c) = x.hwc()?;
    if h == 0 || w == 0 {
        return Err(TensorError::InvalidShape {
            op: "avg_pool_global",
            message: "empty spatial extent".into(),
        });
    }
    let mut out = vec![0.0; c];
    for px in x.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let n = (h * w) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Tensor::from_vec(&[1, 1, c], out)
}

pub fn avg_pool_global_backward(x: &Tensor, gout: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, c) = x.hwc()?;
    if gout.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: "avg_pool_global_backward",
            expected: vec![1, 1, c],
            got: gout.dims().to_vec(),
        });
    }
    let n = (h * w) as f64;
    let per: Vec<f64> = gout.data().iter().map(|g| g / n).collect();
    let mut gx = Tensor::zeros(x.dims());
    for px in gx.data_mut().chunks_exact_mut(c) {
        px.copy_from_slice(&per);
    }
    Ok(gx)
}

fn fc_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize), TensorError> {
    let [m, n] = w.dims()[..] else {
        return Err(TensorError::InvalidShape {
            op: "fully_connected",
            message: format!("weights must be rank 2, got {:?}", w.dims()),
        });
    };
    if x.len() != n || b.dims() != [m] {
        return Err(TensorError::ShapeMismatch {
            op: "fully_connected",
            expected: vec![m, n],
            got: vec![b.len(), x.len()],
        });
    }
    Ok((m, n))
}

/// `y = W x + b` with `W` of dims `[m, n]`; `x` may have any shape with `n`
/// elements. Output dims are `[m]`.
pub fn fully_connected(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = fc_dims(x, w, b)?;
    let out = (0..m)
        .map(|i| {
            let row = &w.data()[i * n..][..n];
            b.data()[i] + row.iter().zip(x.data()).map(|(a, v)| a * v).sum::<f64>()
        })
        .collect();
    Tensor::from_vec(&[m], out)
}

pub fn fully_connected_backward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    gout: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (m, n) = fc_dims(x, w, b)?;
    let mut gx = Tensor::zeros(x.dims());
    let mut gw = Tensor::zeros(w.dims());
    for i in 0..m {
        let g = gout.data()[i];
        for j in 0..n {
            gw.data_mut()[i * n + j] = g * x.data()[j];
            gx.data_mut()[j] += g * w.data()[i * n + j];
        }
    }
    Ok((gx, gw, gout.clone().reshape(b.dims())?))
}

/// Weighted mean cross-entropy of per-pixel softmax over the channel axis.
///
/// Pixels labelled `ignore` do not contribute. `class_weights[k]` scales
/// pixels of class `k`; the loss is divided by the total weight of the
/// counted pixels. Returns the loss and its gradient with respect to the
/// logits.
pub fn softmax_ce(
    logits: &Tensor,
    labels: &[u8],
    class_weights: &[f64],
    ignore: Option<u8>,
) -> Result<(f64, Tensor), TensorError> {
    let (h, w, classes) = logits.hwc()?;
    if classes < 2 {
        return Err(TensorError::InvalidShape {
            op: "softmax_ce",
            message: "need at least two classes".into(),
        });
    }
    if labels.len() != h * w || class_weights.len() != classes {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_ce",
            expected: vec![h * w, classes],
            got: vec![labels.len(), class_weights.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(TensorError::InvalidShape {
            op: "softmax_ce",
            message: format!("label {bad} outside {classes} classes"),
        });
    }
    let mut grad = Tensor::zeros(logits.dims());
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for (p, (z, g)) in logits
        .data()
        .chunks_exact(classes)
        .zip(grad.data_mut().chunks_exact_mut(classes))
        .enumerate()
    {
        let label = labels[p];
        if Some(label) == ignore {
            continue;
        }
        let weight = class_weights[label as usize];
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss += weight * (log_sum - (z[label as usize] - max));
        for (k, gk) in g.iter_mut().enumerate() {
            let prob = ((z[k] - max).exp()) / sum;
            *gk = weight * (prob - if k == label as usize { 1.0 } else { 0.0 });
        }
        total_weight += weight;
    }
    if total_weight <= 0.0 {
        return Err(TensorError::NoLabeledPixels { op: "softmax_ce" });
    }
    grad.data_mut().iter_mut().for_each(|v| *v /= total_weight);
    Ok((loss / total_weight, grad))
}

/// Per-pixel softmax probabilities over the channel axis.
pub fn softmax(logits: &Tensor) -> Result<Tensor, TensorError> {
    let (_, _, classes) = logits.hwc()?;
    let mut out = logits.clone();
    for z in out.data_mut().chunks_exact_mut(classes) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        z.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(out)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, gout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(gout.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.dims(), data).expect("same dims as input")
}

/// Channel concatenation of two `H×W×·` maps.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, ca) = a.hwc()?;
    let (hb, wb, cb) = b.hwc()?;
    if (h, w) != (hb, wb) {
        return Err(TensorError::ShapeMismatch {
            op: "concat_channels",
            expected: vec![h, w, cb],
            got: b.dims().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(h * w * (ca + cb));
    for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
        data.extend_from_slice(pa);
        data.extend_from_slice(pb);
    }
    Tensor::from_vec(&[h, w, ca + cb], data)
}

pub fn concat_channels_backward(ca: usize, cb: usize, gout: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    let (h, w, _) = gout.hwc()?;
    let mut ga = Vec::with_capacity(h * w * ca);
    let mut gb = Vec::with_capacity(h * w * cb);
    for px in gout.data().chunks_exact(ca + cb) {
        ga.extend_from_slice(&px[..ca]);
        gb.extend_from_slice(&px[ca..]);
    }
    Ok((Tensor::from_vec(&[h, w, ca], ga)?, Tensor::from_vec(&[h, w, cb], gb)?))
}

/// Nearest-neighbour ×2 upsampling of an `H×W×C` map.
pub fn upsample2(x: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, c) = x.hwc()?;
    Ok(Tensor::from_fn3(2 * h, 2 * w, c, |y, xx, k| x.at3(y / 2, xx / 2, k)))
}

pub fn upsample2_backward(x_dims: &[usize], gout: &Tensor) -> Result<Tensor, TensorError> {
    let (h2, w2, c) = gout.hwc()?;
    let mut gx = Tensor::zeros(x_dims);
    for y in 0..h2 {
        for xx in 0..w2 {
            for k in 0..c {
                let v = gx.at3(y / 2, xx / 2, k) + gout.at3(y, xx, k);
                gx.set3(y / 2, xx / 2, k, v);
            }
        }
    }
    Ok(gx)
}

fn dynamic_dims(op: &'static str, x: &Tensor, kern: &Tensor, per_pixel: usize) -> Result<(usize, usize, usize), TensorError> {
    let (h, w, c) = x.hwc()?;
    if kern.dims() != [h, w, per_pixel] {
        return Err(TensorError::ShapeMismatch {
            op,
            expected: vec![h, w, per_pixel],
            got: kern.dims().to_vec(),
        });
    }
    Ok((h, w, c))
}

fn check_odd(op: &'static str, k: usize) -> Result<isize, TensorError> {
    if k % 2 == 0 {
        return Err(TensorError::InvalidShape {
            op,
            message: format!("kernel size {k} must be odd"),
        });
    }
    Ok((k / 2) as isize)
}

#[inline]
fn neighbour(y: usize, x: usize, di: isize, dj: isize, h: usize, w: usize) -> Option<(usize, usize)> {
    let sy = y.checked_add_signed(di)?;
    let sx = x.checked_add_signed(dj)?;
    (sy < h && sx < w).then_some((sy, sx))
}

/// Spatially variant channel-wise convolution.
///
/// `kern` is `H×W×(K·K·C)`; at pixel `p` the weight for tap `(i, j)` and
/// channel `c` sits at index `(i·K + j)·C + c`. Output channel `c` at `p`
/// is `Σ_taps kern[p][tap, c] · x[p + tap − K/2, c]` with zero padding.
pub fn channelwise_dynamic(x: &Tensor, kern: &Tensor, k: usize) -> Result<Tensor, TensorError> {
    let r = check_odd("channelwise_dynamic", k)?;
    let (h, w, c) = x.hwc()?;
    dynamic_dims("channelwise_dynamic", x, kern, k * k * c)?;
    let mut out = Tensor::zeros(&[h, w, c]);
    let (xd, kd) = (x.data(), kern.data());
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let o = &mut out.data_mut()[p * c..][..c];
            let kp = &kd[p * k * k * c..][..k * k * c];
            for i in 0..k {
                for j in 0..k {
                    let Some((sy, sx)) = neighbour(y, xx, i as isize - r, j as isize - r, h, w) else {
                        continue;
                    };
                    let src = &xd[(sy * w + sx) * c..][..c];
                    let taps = &kp[(i * k + j) * c..][..c];
                    for ch in 0..c {
                        o[ch] += taps[ch] * src[ch];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`channelwise_dynamic`] with respect to `(x, kern)`.
pub fn channelwise_dynamic_backward(x: &Tensor, kern: &Tensor, k: usize, gout: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    let r = check_odd("channelwise_dynamic_backward", k)?;
    let (h, w, c) = x.hwc()?;
    dynamic_dims("channelwise_dynamic_backward", x, kern, k * k * c)?;
    x.check_same("channelwise_dynamic_backward", gout)?;
    let mut gx = Tensor::zeros(x.dims());
    let mut gk = Tensor::zeros(kern.dims());
    let (xd, kd, gd) = (x.data(), kern.data(), gout.data());
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let go = &gd[p * c..][..c];
            for i in 0..k {
                for j in 0..k {
                    let Some((sy, sx)) = neighbour(y, xx, i as isize - r, j as isize - r, h, w) else {
                        continue;
                    };
                    let s = (sy * w + sx) * c;
                    let t = p * k * k * c + (i * k + j) * c;
                    for ch in 0..c {
                        gk.data_mut()[t + ch] += xd[s + ch] * go[ch];
                        gx.data_mut()[s + ch] += kd[t + ch] * go[ch];
                    }
                }
            }
        }
    }
    Ok((gx, gk))
}

/// Applies one `C′×C` matrix at every pixel: `out[p] = W · x[p]`.
/// `wmat` holds `C′·C` entries, row-major (`co·C + ci`).
pub fn cross_channel(x: &Tensor, wmat: &Tensor, c_out: usize) -> Result<Tensor, TensorError> {
    let (h, w, c) = x.hwc()?;
    if wmat.len() != c_out * c {
        return Err(TensorError::ShapeMismatch {
            op: "cross_channel",
            expected: vec![c_out, c],
            got: wmat.dims().to_vec(),
        });
    }
    let m = wmat.data();
    let mut out = Tensor::zeros(&[h, w, c_out]);
    for (src, dst) in x.data().chunks_exact(c).zip(out.data_mut().chunks_exact_mut(c_out)) {
        for (co, d) in dst.iter_mut().enumerate() {
            *d = m[co * c..][..c].iter().zip(src).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

pub fn cross_channel_backward(x: &Tensor, wmat: &Tensor, c_out: usize, gout: &Tensor) -> Result<(Tensor, Tensor), TensorError> {
    let (h, w, c) = x.hwc()?;
    if gout.dims() != [h, w, c_out] || wmat.len() != c_out * c {
        return Err(TensorError::ShapeMismatch {
            op: "cross_channel_backward",
            expected: vec![h, w, c_out],
            got: gout.dims().to_vec(),
        });
    }
    let m = wmat.data();
    let mut gx = Tensor::zeros(x.dims());
    let mut gm = Tensor::zeros(wmat.dims());
    for ((src, g), gsrc) in x
        .data()
        .chunks_exact(c)
        .zip(gout.data().chunks_exact(c_out))
        .zip(gx.data_mut().chunks_exact_mut(c))
    {
        for co in 0..c_out {
            let go = g[co];
            for ci in 0..c {
                gm.data_mut()[co * c + ci] += go * src[ci];
                gsrc[ci] += go * m[co * c + ci];
            }
        }
    }
    Ok((gx, gm))
}

/// Spatially variant cross-channel convolution with a full per-pixel kernel.
///
/// `kern` is `H×W×(K·K·C·C′)`; the weight for tap `(i, j)`, input channel
/// `ci` and output channel `co` sits at `((i·K + j)·C + ci)·C′ + co`.
pub fn dynamic_full(x: &Tensor, kern: &Tensor, k: usize, c_out: usize) -> Result<Tensor, TensorError> {
    let r = check_odd("dynamic_full", k)?;
    let (h, w, c) = x.hwc()?;
    dynamic_dims("dynamic_full", x, kern, k * k * c * c_out)?;
    let mut out = Tensor::zeros(&[h, w, c_out]);
    let (xd, kd) = (x.data(), kern.data());
    let per = k * k * c * c_out;
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let o = &mut out.data_mut()[p * c_out..][..c_out];
            for i in 0..k {
                for j in 0..k {
                    let Some((sy, sx)) = neighbour(y, xx, i as isize - r, j as isize - r, h, w) else {
                        continue;
                    };
                    let src = &xd[(sy * w + sx) * c..][..c];
                    for (ci, &xv) in src.iter().enumerate() {
                        let row = &kd[p * per + ((i * k + j) * c + ci) * c_out..][..c_out];
                        for (acc, &kv) in o.iter_mut().zip(row) {
                            *acc += kv * xv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn dynamic_full_backward(
    x: &Tensor,
    kern: &Tensor,
    k: usize,
    c_out: usize,
    gout: &Tensor,
) -> Result<(Tensor, Tensor), TensorError> {
    let r = check_odd("dynamic_full_backward", k)?;
    let (h, w, c) = x.hwc()?;
    dynamic_dims("dynamic_full_backward", x, kern, k * k * c * c_out)?;
    let per = k * k * c * c_out;
    let mut gx = Tensor::zeros(x.dims());
    let mut gk = Tensor::zeros(kern.dims());
    let (xd, kd, gd) = (x.data(), kern.data(), gout.data());
    for y in 0..h {
        for xx in 0..w {
            let p = y * w + xx;
            let go = &gd[p * c_out..][..c_out];
            for i in 0..k {
                for j in 0..k {
                    let Some((sy, sx)) = neighbour(y, xx, i as isize - r, j as isize - r, h, w) else {
                        continue;
                    };
                    let s = (sy * w + sx) * c;
                    for ci in 0..c {
                        let t = p * per + ((i * k + j) * c + ci) * c_out;
                        let mut acc = 0.0;
                        for co in 0..c_out {
                            gk.data_mut()[t + co] += xd[s + ci] * go[co];
                            acc += kd[t + co] * go[co];
                        }
                        gx.data_mut()[s + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((gx, gk))
}
