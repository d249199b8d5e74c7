//! Layer primitives and their hand-written backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NnError, Result, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Valid,
    /// Output extent `ceil(n / stride)`; odd padding goes to the bottom/right.
    Same,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn dims4(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(NnError::ShapeMismatch(format!("{what} must be 4-d, got {s:?}"))),
    }
}

fn dims2(t: &Tensor<impl Scalar>, what: &str) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        ref s => Err(NnError::ShapeMismatch(format!("{what} must be 2-d, got {s:?}"))),
    }
}

/// Output extent and leading pad of one spatial axis.
pub fn conv_geometry(n: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if k > n || stride == 0 {
                return Err(NnError::ShapeMismatch(format!(
                    "kernel {k} does not fit extent {n}"
                )));
            }
            Ok(((n - k) / stride + 1, 0))
        }
        Padding::Same => {
            if stride == 0 || n == 0 {
                return Err(NnError::ShapeMismatch("zero stride or extent".into()));
            }
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Ok((out, total / 2))
        }
    }
}

struct ConvDims {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    f: usize,
    ho: usize,
    wo: usize,
    pad_t: usize,
    pad_l: usize,
    stride: usize,
}

impl ConvDims {
    fn new<T: Scalar>(x: &Tensor<T>, wt: &Tensor<T>, stride: usize, padding: Padding) -> Result<Self> {
        let [b, h, w, cin] = dims4(x, "conv input")?;
        let [k, k2, wc, f] = dims4(wt, "conv weights")?;
        if k != k2 || wc != cin {
            return Err(NnError::ShapeMismatch(format!(
                "weights {:?} for input {:?}",
                wt.shape(),
                x.shape()
            )));
        }
        let (ho, pad_t) = conv_geometry(h, k, stride, padding)?;
        let (wo, pad_l) = conv_geometry(w, k, stride, padding)?;
        Ok(ConvDims {
            b,
            h,
            w,
            cin,
            k,
            f,
            ho,
            wo,
            pad_t,
            pad_l,
            stride,
        })
    }

    /// Input coordinate for output `o` and kernel tap `t`, if inside the input.
    #[inline]
    fn src(o: usize, t: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
        let p = (o * stride + t).checked_sub(pad)?;
        (p < n).then_some(p)
    }
}

/// 2-D convolution (cross-correlation). `x: [B,H,W,Cin]`, `w: [K,K,Cin,F]`, `bias: [F]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let d = ConvDims::new(x, w, stride, padding)?;
    if bias.shape() != [d.f] {
        return Err(NnError::ShapeMismatch(format!(
            "bias {:?}, {} filters",
            bias.shape(),
            d.f
        )));
    }
    let (xs, ws, bs) = (x.data(), w.data(), bias.data());
    let mut out = Tensor::zeros(&[d.b, d.ho, d.wo, d.f]);
    let o = out.data_mut();
    for b in 0..d.b {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let base = ((b * d.ho + oy) * d.wo + ox) * d.f;
                let acc = &mut o[base..base + d.f];
                acc.copy_from_slice(bs);
                for ky in 0..d.k {
                    let Some(iy) = ConvDims::src(oy, ky, d.stride, d.pad_t, d.h) else {
                        continue;
                    };
                    for kx in 0..d.k {
                        let Some(ix) = ConvDims::src(ox, kx, d.stride, d.pad_l, d.w) else {
                            continue;
                        };
                        let xi = ((b * d.h + iy) * d.w + ix) * d.cin;
                        let wi = (ky * d.k + kx) * d.cin * d.f;
                        for ci in 0..d.cin {
                            let xv = xs[xi + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let row = &ws[wi + ci * d.f..wi + (ci + 1) * d.f];
                            for (a, &wv) in acc.iter_mut().zip(row) {
                                *a += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: Padding,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = ConvDims::new(x, w, stride, padding)?;
    if dout.shape() != [d.b, d.ho, d.wo, d.f] {
        return Err(NnError::ShapeMismatch(format!("upstream {:?}", dout.shape())));
    }
    let (xs, ws, gs) = (x.data(), w.data(), dout.data());
    let mut dx = Tensor::zeros(x.shape());
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[d.f]);
    let (dxs, dws, dbs) = (dx.data_mut(), dw.data_mut(), db.data_mut());
    for b in 0..d.b {
        for oy in 0..d.ho {
            for ox in 0..d.wo {
                let base = ((b * d.ho + oy) * d.wo + ox) * d.f;
                let g = &gs[base..base + d.f];
                for (a, &gv) in dbs.iter_mut().zip(g) {
                    *a += gv;
                }
                for ky in 0..d.k {
                    let Some(iy) = ConvDims::src(oy, ky, d.stride, d.pad_t, d.h) else {
                        continue;
                    };
                    for kx in 0..d.k {
                        let Some(ix) = ConvDims::src(ox, kx, d.stride, d.pad_l, d.w) else {
                            continue;
                        };
                        let xi = ((b * d.h + iy) * d.w + ix) * d.cin;
                        let wi = (ky * d.k + kx) * d.cin * d.f;
                        for ci in 0..d.cin {
                            let r = wi + ci * d.f..wi + (ci + 1) * d.f;
                            let xv = xs[xi + ci];
                            if xv != T::zero() {
                                for (a, &gv) in dws[r.clone()].iter_mut().zip(g) {
                                    *a += xv * gv;
                                }
                            }
                            let mut s = T::zero();
                            for (&wv, &gv) in ws[r].iter().zip(g) {
                                s += wv * gv;
                            }
                            dxs[xi + ci] += s;
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dw, db))
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of [`relu`] given its forward output.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(out.shape(), data).expect("same shape")
}

/// Non-overlapping max pooling with window and stride `size`; trailing
/// rows/columns that do not fill a window are dropped. Returns the output and,
/// per output element, the flat input index of its first maximum in scan order.
pub fn maxpool<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, h, w, c] = dims4(x, "pool input")?;
    if size == 0 || size > h || size > w {
        return Err(NnError::ShapeMismatch(format!("pool {size} on {:?}", x.shape())));
    }
    let (ho, wo) = (h / size, w / size);
    let xs = x.data();
    let mut out = Tensor::zeros(&[b, ho, wo, c]);
    let mut arg = vec![0usize; out.len()];
    let o = out.data_mut();
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let ob = ((bi * ho + oy) * wo + ox) * c;
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut bv = T::neg_infinity();
                    for py in 0..size {
                        for px in 0..size {
                            let i = ((bi * h + oy * size + py) * w + ox * size + px) * c + ch;
                            if best == usize::MAX || xs[i] > bv {
                                best = i;
                                bv = xs[i];
                            }
                        }
                    }
                    o[ob + ch] = bv;
                    arg[ob + ch] = best;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool_backward<T: Scalar>(dout: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    dx
}

/// Inverted-dropout multipliers: 0 with probability `rate`, else `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

/// Apply a dropout mask; the backward pass is the same product with the upstream gradient.
pub fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Dropout. Eval mode (or rate 0) is the identity and draws nothing from `rng`.
pub fn dropout<T: Scalar, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> (Tensor<T>, Option<Vec<T>>) {
    if mode == Mode::Eval || rate == 0.0 {
        return (x.clone(), None);
    }
    let mask = dropout_mask(x.len(), rate, rng);
    (apply_mask(x, &mask), Some(mask))
}

/// Spatial mean per channel: `[B,H,W,C] -> [B,C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, h, w, c] = dims4(x, "GAP input")?;
    let hw = h * w;
    let mut out = Tensor::zeros(&[b, c]);
    let xs = x.data();
    let o = out.data_mut();
    for bi in 0..b {
        let acc = &mut o[bi * c..(bi + 1) * c];
        for p in 0..hw {
            let row = &xs[(bi * hw + p) * c..(bi * hw + p + 1) * c];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let inv = T::from_f64(1.0 / hw as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok(out)
}

pub fn global_avg_pool_backward<T: Scalar>(dout: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let (b, hw, c) = (input_shape[0], input_shape[1] * input_shape[2], input_shape[3]);
    let inv = T::from_f64(1.0 / hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let g = dout.data();
    for bi in 0..b {
        for p in 0..hw {
            for ch in 0..c {
                d[(bi * hw + p) * c + ch] = g[bi * c + ch] * inv;
            }
        }
    }
    dx
}

/// `x: [B,N]`, `w: [N,M]`, `bias: [M]` -> `[B,M]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, n] = dims2(x, "dense input")?;
    let [wn, m] = dims2(w, "dense weights")?;
    if wn != n || bias.shape() != [m] {
        return Err(NnError::ShapeMismatch(format!(
            "dense {:?} x {:?} + {:?}",
            x.shape(),
            w.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[b, m]);
    let (xs, ws) = (x.data(), w.data());
    let o = out.data_mut();
    for bi in 0..b {
        let acc = &mut o[bi * m..(bi + 1) * m];
        acc.copy_from_slice(bias.data());
        for i in 0..n {
            let xv = xs[bi * n + i];
            for (a, &wv) in acc.iter_mut().zip(&ws[i * m..(i + 1) * m]) {
                *a += xv * wv;
            }
        }
    }
    Ok(out)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [b, n] = dims2(x, "dense input")?;
    let [_, m] = dims2(w, "dense weights")?;
    if dout.shape() != [b, m] {
        return Err(NnError::ShapeMismatch(format!("upstream {:?}", dout.shape())));
    }
    let mut dx = Tensor::zeros(&[b, n]);
    let mut dw = Tensor::zeros(&[n, m]);
    let mut db = Tensor::zeros(&[m]);
    let (xs, ws, gs) = (x.data(), w.data(), dout.data());
    let (dxs, dws, dbs) = (dx.data_mut(), dw.data_mut(), db.data_mut());
    for bi in 0..b {
        let g = &gs[bi * m..(bi + 1) * m];
        for (a, &gv) in dbs.iter_mut().zip(g) {
            *a += gv;
        }
        for i in 0..n {
            let xv = xs[bi * n + i];
            let row = i * m..(i + 1) * m;
            for (a, &gv) in dws[row.clone()].iter_mut().zip(g) {
                *a += xv * gv;
            }
            let mut s = T::zero();
            for (&wv, &gv) in ws[row].iter().zip(g) {
                s += wv * gv;
            }
            dxs[bi * n + i] = s;
        }
    }
    Ok((dx, dw, db))
}

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// Saved from the training-mode forward pass for [`batch_norm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel statistics over batch and spatial positions (the last axis is the channel).
fn channel_moments<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let c = *x.shape().last().unwrap();
    let n = T::from_f64((x.len() / c) as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// Training-mode batch normalization over all but the last axis. Uses the
/// biased batch variance and updates the running statistics in place.
pub fn batch_norm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let batch = x.shape()[0];
    if batch < 2 {
        return Err(NnError::BatchTooSmall(batch));
    }
    let c = *x.shape().last().unwrap();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(NnError::ShapeMismatch(format!("batch norm over {c} channels")));
    }
    let (mean, var) = channel_moments(x);
    let eps = T::from_f64(BN_EPS);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    for row in xhat.data_mut().chunks_exact_mut(c) {
        for ((v, &m), &s) in row.iter_mut().zip(&mean).zip(&inv_std) {
            *v = (*v - m) * s;
        }
    }
    let mut y = xhat.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for ((v, &g), &bt) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + bt;
        }
    }
    let mom = T::from_f64(BN_MOMENTUM);
    for (r, &m) in running_mean.data_mut().iter_mut().zip(&mean) {
        *r = mom * *r + (T::one() - mom) * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(&var) {
        *r = mom * *r + (T::one() - mom) * v;
    }
    Ok((y, BatchNormCache { xhat, inv_std }))
}

/// Inference-mode batch normalization with running statistics.
pub fn batch_norm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Tensor<T> {
    let c = *x.shape().last().unwrap();
    let eps = T::from_f64(BN_EPS);
    let scale: Vec<T> = gamma
        .data()
        .iter()
        .zip(running_var.data())
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - running_mean.data()[i]) * scale[i] + beta.data()[i];
        }
    }
    y
}

/// Gradients of [`batch_norm_train`]: `(d_input, d_gamma, d_beta)`.
pub fn batch_norm_backward<T: Scalar>(
    dout: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let c = gamma.len();
    let n = T::from_f64((dout.len() / c) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (g_row, xh_row) in dout.data().chunks_exact(c).zip(cache.xhat.data().chunks_exact(c)) {
        for i in 0..c {
            dgamma[i] += g_row[i] * xh_row[i];
            dbeta[i] += g_row[i];
        }
    }
    // dx = gamma * inv_std / N * (N * dy - sum(dy) - xhat * sum(dy * xhat))
    let mut dx = dout.clone();
    for (row, xh_row) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(cache.xhat.data().chunks_exact(c))
    {
        for i in 0..c {
            let k = gamma.data()[i] * cache.inv_std[i] / n;
            row[i] = k * (n * row[i] - dbeta[i] - xh_row[i] * dgamma[i]);
        }
    }
    (
        dx,
        Tensor::from_vec(&[c], dgamma).unwrap(),
        Tensor::from_vec(&[c], dbeta).unwrap(),
    )
}

/// Elementwise `(x - mean) / std`.
pub fn standardize<T: Scalar>(x: &Tensor<T>, mean: f64, std: f64) -> Tensor<T> {
    let (m, s) = (T::from_f64(mean), T::from_f64(std));
    x.map(|v| (v - m) / s)
}

/// Row-wise softmax of `[B,C]` logits, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let c = *logits.shape().last().unwrap();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean cross-entropy of `[B,C]` logits against integer labels, and its
/// gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let [b, c] = dims2(logits, "logits")?;
    if labels.len() != b {
        return Err(NnError::ShapeMismatch(format!(
            "{} labels for {b} rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::InvalidLabel(bad));
    }
    let mut grad = softmax(logits);
    let bt = T::from_f64(b as f64);
    let mut loss = T::zero();
    for (i, row) in grad.data_mut().chunks_exact_mut(c).enumerate() {
        let lg = &logits.data()[i * c..(i + 1) * c];
        let m = lg.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + lg.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        loss += lse - lg[labels[i]];
        row[labels[i]] -= T::one();
        row.iter_mut().for_each(|v| *v /= bt);
    }
    Ok((loss / bt, grad))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub use crate::nn::gradcheck::{check_grad, random_tensor};

    /// Direct nested-summation convolution used as an oracle.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: Padding) -> Tensor<f64> {
        let [bn, h, wd, cin] = dims4(x, "").unwrap();
        let [k, _, _, f] = dims4(w, "").unwrap();
        let (ho, wo, pt, pl) = match p {
            Padding::Valid => ((h - k) / s + 1, (wd - k) / s + 1, 0isize, 0isize),
            Padding::Same => {
                let ho = (h + s - 1) / s;
                let wo = (wd + s - 1) / s;
                let ph = ((ho - 1) * s + k).saturating_sub(h);
                let pw = ((wo - 1) * s + k).saturating_sub(wd);
                (ho, wo, (ph / 2) as isize, (pw / 2) as isize)
            }
        };
        let mut out = vec![0.0; bn * ho * wo * f];
        for bi in 0..bn {
            for oy in 0..ho {
                for ox in 0..wo {
                    for fi in 0..f {
                        let mut acc = b.data()[fi];
                        for ky in 0..k {
                            for kx in 0..k {
                                for ci in 0..cin {
                                    let iy = (oy * s + ky) as isize - pt;
                                    let ix = (ox * s + kx) as isize - pl;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data()[((bi * h + iy as usize) * wd + ix as usize) * cin + ci];
                                    let wv = w.data()[((ky * k + kx) * cin + ci) * f + fi];
                                    acc += xv * wv;
                                }
                            }
                        }
                        out[((bi * ho + oy) * wo + ox) * f + fi] = acc;
                    }
                }
            }
        }
        Tensor::from_vec(&[bn, ho, wo, f], out).unwrap()
    }

    fn pool_oracle(x: &Tensor<f64>, size: usize) -> Tensor<f64> {
        let [b, h, w, c] = dims4(x, "").unwrap();
        let (ho, wo) = (h / size, w / size);
        let mut out = Vec::new();
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let region = (0..size).flat_map(|py| (0..size).map(move |px| (py, px)));
                        let m = region
                            .map(|(py, px)| {
                                x.data()[((bi * h + oy * size + py) * w + ox * size + px) * c + ch]
                            })
                            .fold(f64::NEG_INFINITY, f64::max);
                        out.push(m);
                    }
                }
            }
        }
        Tensor::from_vec(&[b, ho, wo, c], out).unwrap()
    }

    /// Random linear readout so the scalar loss touches every output.
    fn readout(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        random_tensor(shape, rng)
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_shape_examples() {
        let x = Tensor::<f32>::zeros(&[1, 40, 862, 1]);
        let w = Tensor::zeros(&[2, 2, 1, 16]);
        let b = Tensor::zeros(&[16]);
        assert_eq!(
            conv2d(&x, &w, &b, 1, Padding::Valid).unwrap().shape(),
            &[1, 39, 861, 16]
        );
        let w3 = Tensor::zeros(&[3, 3, 1, 4]);
        let b3 = Tensor::zeros(&[4]);
        assert_eq!(
            conv2d(&x, &w3, &b3, 1, Padding::Same).unwrap().shape(),
            &[1, 40, 862, 4]
        );
        let bad = Tensor::zeros(&[2, 2, 3, 16]);
        assert!(conv2d(&x, &bad, &b, 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv_scalar_case() {
        let x = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0f64]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![-2.0]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        assert_eq!(conv2d(&x, &w, &b, 1, Padding::Valid).unwrap().data(), &[-5.5]);
    }

    #[test]
    fn conv_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in 0..100 {
            let k = rng.random_range(1..4);
            let h = rng.random_range(k..8);
            let w = rng.random_range(k..8);
            let cin = rng.random_range(1..4);
            let f = rng.random_range(1..4);
            let s = rng.random_range(1..3);
            let p = if case % 2 == 0 {
                Padding::Valid
            } else {
                Padding::Same
            };
            let x = random_tensor(&[2, h, w, cin], &mut rng);
            let wt = random_tensor(&[k, k, cin, f], &mut rng);
            let b = random_tensor(&[f], &mut rng);
            let got = conv2d(&x, &wt, &b, s, p).unwrap();
            let want = conv_oracle(&x, &wt, &b, s, p);
            assert_eq!(got.shape(), want.shape());
            for (a, e) in got.data().iter().zip(want.data()) {
                assert!((a - e).abs() <= 1e-5, "case {case}");
            }
        }
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_tensor(&[1, 6, 7, 2], &mut rng);
            let w = random_tensor(&[2, 2, 2, 3], &mut rng);
            let b = Tensor::zeros(&[3]);
            let a: f64 = rng.random_range(-3.0..3.0);
            let lhs = conv2d(&x.map(|v| a * v), &w, &b, 1, Padding::Valid).unwrap();
            let rhs = conv2d(&x, &w, &b, 1, Padding::Valid).unwrap().map(|v| a * v);
            for (l, r) in lhs.data().iter().zip(rhs.data()) {
                assert!((l - r).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..20 {
            let p = if case % 2 == 0 {
                Padding::Valid
            } else {
                Padding::Same
            };
            let s = 1 + case % 3 / 2;
            let x = random_tensor(&[2, 5, 6, 2], &mut rng);
            let w = random_tensor(&[3, 3, 2, 3], &mut rng);
            let b = random_tensor(&[3], &mut rng);
            let out = conv2d(&x, &w, &b, s, p).unwrap();
            let r = readout(out.shape(), &mut rng);
            let (dx, dw, db) = conv2d_backward(&x, &w, s, p, &r).unwrap();
            check_grad(&x, &dx, |x| dot(&conv2d(x, &w, &b, s, p).unwrap(), &r)).unwrap();
            check_grad(&w, &dw, |w| dot(&conv2d(&x, w, &b, s, p).unwrap(), &r)).unwrap();
            check_grad(&b, &db, |b| dot(&conv2d(&x, &w, b, s, p).unwrap(), &r)).unwrap();
        }
    }

    #[test]
    fn pool_examples() {
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool(&x, 2).unwrap().0.data(), &[4.0]);
        let big = Tensor::<f32>::zeros(&[1, 40, 862, 1]);
        assert_eq!(maxpool(&big, 3).unwrap().0.shape(), &[1, 13, 287, 1]);
    }

    #[test]
    fn pool_matches_oracle_and_routes_to_first_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let size = rng.random_range(2..4);
            let h = rng.random_range(size..10);
            let w = rng.random_range(size..10);
            // Coarse values so ties occur.
            let n = 2 * h * w * 2;
            let x = Tensor::from_vec(
                &[2, h, w, 2],
                (0..n).map(|_| rng.random_range(0..4) as f64).collect(),
            )
            .unwrap();
            let (out, arg) = maxpool(&x, size).unwrap();
            assert_eq!(out, pool_oracle(&x, size));
            for (o, &i) in out.data().iter().zip(&arg) {
                assert_eq!(x.data()[i], *o);
            }
            let g = Tensor::filled(out.shape(), 1.0);
            let dx = maxpool_backward(&g, &arg, x.shape());
            assert_eq!(dx.sum(), out.len() as f64);
        }
        // Ties go to the first position in scan order.
        let x = Tensor::from_vec(&[1, 2, 2, 1], vec![5.0f64, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(maxpool(&x, 2).unwrap().1, vec![0]);
    }

    #[test]
    fn pool_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_tensor(&[2, 6, 7, 3], &mut rng);
            let (out, arg) = maxpool(&x, 2).unwrap();
            let r = readout(out.shape(), &mut rng);
            let dx = maxpool_backward(&r, &arg, x.shape());
            check_grad(&x, &dx, |x| dot(&maxpool(x, 2).unwrap().0, &r)).unwrap();
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[1, 4, 4, 2], &mut rng);
        assert_eq!(dropout(&x, 0.2, Mode::Eval, &mut rng).0, x);
        assert_eq!(dropout(&x, 0.0, Mode::Train, &mut rng).0, x);
        let a = dropout(&x, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).0;
        let b = dropout(&x, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(9)).0;
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_statistics() {
        for seed in 0..10 {
            let x = Tensor::<f64>::filled(&[1, 100, 100, 1], 1.0);
            let (y, _) = dropout(&x, 0.2, Mode::Train, &mut ChaCha8Rng::seed_from_u64(seed));
            let zeros = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.len() as f64;
            assert!((zeros - 0.2).abs() < 0.02, "{zeros}");
            let mean = y.sum() / y.len() as f64;
            assert!((mean - 1.0).abs() < 0.03, "{mean}");
        }
    }

    #[test]
    fn dropout_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = random_tensor(&[2, 3, 4, 2], &mut rng);
            let mask: Vec<f64> = dropout_mask(x.len(), 0.3, &mut rng);
            let r = readout(x.shape(), &mut rng);
            let dx = apply_mask(&r, &mask);
            check_grad(&x, &dx, |x| dot(&apply_mask(x, &mask), &r)).unwrap();
        }
    }

    #[test]
    fn gap_examples() {
        let ones = Tensor::<f64>::filled(&[1, 3, 105, 128], 1.0);
        assert!(global_avg_pool(&ones)
            .unwrap()
            .data()
            .iter()
            .all(|&v| (v - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_tensor(&[1, 1, 1, 5], &mut rng);
        assert_eq!(global_avg_pool(&v).unwrap().data(), v.data());
        let x = random_tensor(&[1, 4, 6, 3], &mut rng);
        assert!((global_avg_pool(&x).unwrap().sum() * 24.0 - x.sum()).abs() < 1e-4);
    }

    #[test]
    fn gap_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_tensor(&[2, 3, 4, 3], &mut rng);
            let r = readout(&[2, 3], &mut rng);
            let dx = global_avg_pool_backward(&r, x.shape());
            check_grad(&x, &dx, |x| dot(&global_avg_pool(x).unwrap(), &r)).unwrap();
        }
    }

    #[test]
    fn dense_examples_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_tensor(&[3, 4], &mut rng);
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
        let b = random_tensor(&[4], &mut rng);
        let z = dense(&Tensor::zeros(&[1, 4]), &eye, &b).unwrap();
        assert_eq!(z.data(), b.data());
        for _ in 0..20 {
            let x = random_tensor(&[2, 5], &mut rng);
            let w = random_tensor(&[5, 3], &mut rng);
            let bias = random_tensor(&[3], &mut rng);
            let got = dense(&x, &w, &bias).unwrap();
            for bi in 0..2 {
                for j in 0..3 {
                    let want: f64 = bias.data()[j]
                        + (0..5)
                            .map(|i| x.data()[bi * 5 + i] * w.data()[i * 3 + j])
                            .sum::<f64>();
                    assert!((got.data()[bi * 3 + j] - want).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn dense_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_tensor(&[3, 5], &mut rng);
            let w = random_tensor(&[5, 4], &mut rng);
            let b = random_tensor(&[4], &mut rng);
            let r = readout(&[3, 4], &mut rng);
            let (dx, dw, db) = dense_backward(&x, &w, &r).unwrap();
            check_grad(&x, &dx, |x| dot(&dense(x, &w, &b).unwrap(), &r)).unwrap();
            check_grad(&w, &dw, |w| dot(&dense(&x, w, &b).unwrap(), &r)).unwrap();
            check_grad(&b, &db, |b| dot(&dense(&x, &w, b).unwrap(), &r)).unwrap();
        }
    }

    #[test]
    fn relu_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let x = random_tensor(&[2, 3, 3, 2], &mut rng);
            let r = readout(x.shape(), &mut rng);
            let dx = relu_backward(&relu(&x), &r);
            check_grad(&x, &dx, |x| dot(&relu(x), &r)).unwrap();
        }
    }

    fn bn_params(c: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::zeros(&[c]), Tensor::filled(&[c], 1.0))
    }

    #[test]
    fn batch_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random_tensor(&[4, 5, 6, 3], &mut rng).map(|v| 3.0 * v + 2.0);
        let (mut rm, mut rv) = bn_params(3);
        let g = Tensor::filled(&[3], 1.0);
        let b = Tensor::zeros(&[3]);
        let (y, _) = batch_norm_train(&x, &g, &b, &mut rm, &mut rv).unwrap();
        let (mean, var) = channel_moments(&y);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5);
            assert!((var[c] - 1.0).abs() < 1e-3);
        }
        // Running stats moved 10% toward the batch moments.
        let (bm, _) = channel_moments(&x);
        assert!((rm.data()[0] - 0.1 * bm[0]).abs() < 1e-12);
    }

    #[test]
    fn batch_norm_identity_on_standardized_input() {
        let x = Tensor::from_vec(&[2, 1, 2, 1], vec![1.0f64, -1.0, 1.0, -1.0]).unwrap();
        let (mut rm, mut rv) = bn_params(1);
        let (y, _) = batch_norm_train(
            &x,
            &Tensor::filled(&[1], 1.0),
            &Tensor::zeros(&[1]),
            &mut rm,
            &mut rv,
        )
        .unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_formula() {
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0f64, -1.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![2.0, 0.5]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.1, -0.2]).unwrap();
        let m = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let v = Tensor::from_vec(&[2], vec![4.0, 0.25]).unwrap();
        let y = batch_norm_eval(&x, &g, &b, &m, &v);
        let want0 = (3.0 - 1.0) / (4.0f64 + BN_EPS).sqrt() * 2.0 + 0.1;
        let want1 = (-1.0 - 0.0) / (0.25f64 + BN_EPS).sqrt() * 0.5 - 0.2;
        assert_eq!(y.data(), &[want0, want1]);
    }

    #[test]
    fn batch_norm_rejects_single_sample() {
        let x = Tensor::<f64>::zeros(&[1, 2, 2, 1]);
        let (mut rm, mut rv) = bn_params(1);
        assert!(matches!(
            batch_norm_train(
                &x,
                &Tensor::filled(&[1], 1.0),
                &Tensor::zeros(&[1]),
                &mut rm,
                &mut rv
            ),
            Err(NnError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn batch_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let x = random_tensor(&[3, 2, 3, 2], &mut rng);
            let g = random_tensor(&[2], &mut rng);
            let b = random_tensor(&[2], &mut rng);
            let r = readout(x.shape(), &mut rng);
            let fwd = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
                let (mut rm, mut rv) = bn_params(2);
                batch_norm_train(x, g, b, &mut rm, &mut rv).unwrap()
            };
            let (_, cache) = fwd(&x, &g, &b);
            let (dx, dg, db) = batch_norm_backward(&r, &cache, &g);
            check_grad(&x, &dx, |x| dot(&fwd(x, &g, &b).0, &r)).unwrap();
            check_grad(&g, &dg, |g| dot(&fwd(&x, g, &b).0, &r)).unwrap();
            check_grad(&b, &db, |b| dot(&fwd(&x, &g, b).0, &r)).unwrap();
        }
    }

    #[test]
    fn softmax_xent_examples() {
        let logits = Tensor::from_vec(&[2, 2], vec![0.0f64, 0.0, 0.0, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0, 0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad.data(), &[-0.25, 0.25, -0.25, 0.25]);
        let big = Tensor::from_vec(&[1, 2], vec![1000.0f64, 0.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&big, &[0]).unwrap();
        assert!(loss.abs() < 1e-12 && grad.all_finite());
        let big32 = Tensor::from_vec(&[1, 2], vec![1000.0f32, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&big32, &[1]).unwrap().0.is_finite());
        assert!(matches!(
            softmax_cross_entropy(&big, &[2]),
            Err(NnError::InvalidLabel(2))
        ));
    }

    #[test]
    fn softmax_xent_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let logits = random_tensor(&[4, 2], &mut rng).map(|v| 3.0 * v);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..2)).collect();
            let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
            check_grad(&logits, &grad, |l| softmax_cross_entropy(l, &labels).unwrap().0).unwrap();
        }
    }
}
