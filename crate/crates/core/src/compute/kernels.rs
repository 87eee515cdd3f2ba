//! Numeric kernels shared by the tape primitives and the value-level helpers.

use crate::compute::rng::RngState;
use crate::compute::tape::MASK_BIAS;
use crate::compute::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let u = T::from_f64_lossy(GELU_C) * (x + T::from_f64_lossy(GELU_K) * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy(GELU_C);
    let k = T::from_f64_lossy(GELU_K);
    let t = (c * (x + k * x * x * x)).tanh();
    let du = c * (T::one() + T::from_f64_lossy(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

/// Writes the standardized row into `out` and returns `1/sqrt(var + eps)`.
pub(crate) fn normalize_row<T: Scalar>(row: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::from_usize(row.len()).unwrap();
    let mean = row.iter().copied().sum::<T>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - mean) * inv;
    }
    inv
}

pub(crate) fn layer_norm_backward<T: Scalar>(g: &[T], xhat: &[T], inv_std: &[T], gamma: &[T], gx: &mut [T]) {
    let c = gamma.len();
    let n = T::from_usize(c).unwrap();
    let mut dxhat = vec![T::zero(); c];
    for (r, &inv) in inv_std.iter().enumerate() {
        let gr = &g[r * c..(r + 1) * c];
        let xr = &xhat[r * c..(r + 1) * c];
        for j in 0..c {
            dxhat[j] = gr[j] * gamma[j];
        }
        let m1 = dxhat.iter().copied().sum::<T>() / n;
        let m2 = dxhat.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() / n;
        for j in 0..c {
            gx[r * c + j] = gx[r * c + j] + inv * (dxhat[j] - m1 - xr[j] * m2);
        }
    }
}

/// Inverted-dropout mask, or `None` when dropout is a no-op.
pub(crate) fn dropout_mask<T: Scalar>(
    len: usize,
    rate: f64,
    rng: &mut RngState,
    training: bool,
) -> Result<Option<Vec<T>>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::param(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(None);
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    Ok(Some(
        (0..len)
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect(),
    ))
}

/// Row-wise softmax (or log-softmax) of `tau·x` with max subtraction.
pub(crate) fn softmax<T: Scalar>(x: &Tensor<T>, tau: T, log: bool) -> Result<Tensor<T>> {
    if !(tau > T::zero()) {
        return Err(Error::param(format!("temperature must be positive, got {tau}")));
    }
    let c = x.cols();
    let mut out = vec![T::zero(); x.len()];
    if c > 0 {
        for (row, o) in x.data().chunks(c).zip(out.chunks_mut(c)) {
            softmax_row(row, tau, log, o);
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T], tau: T, log: bool, out: &mut [T]) {
    let max = row.iter().map(|&v| tau * v).fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        *o = tau * v - max;
        total = total + o.exp();
    }
    if log {
        let lt = total.ln();
        for o in out.iter_mut() {
            *o = *o - lt;
        }
    } else {
        for o in out.iter_mut() {
            *o = o.exp() / total;
        }
    }
}

/// `Σ (p−q)(log p − log q)` for log-probability rows. Every term is a
/// product of two same-signed factors, so the result is nonnegative and
/// exactly symmetric in its arguments.
pub(crate) fn symmetric_kl_row<T: Scalar>(log_p: &[T], log_q: &[T]) -> T {
    log_p
        .iter()
        .zip(log_q)
        .map(|(&a, &b)| (a.exp() - b.exp()) * (a - b))
        .sum()
}

/// Returns `(output, probabilities, macs)`; probabilities are laid out as
/// `[batch, heads, seq, seq]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    key_mask: &[bool],
    batch: usize,
    seq: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, u64) {
    let a = d / heads;
    let scale = T::one() / T::from_usize(a).unwrap().sqrt();
    let bias = T::from_f64_lossy(MASK_BIAS);
    let mut out = vec![T::zero(); batch * seq * d];
    let mut probs = vec![T::zero(); batch * heads * seq * seq];
    let mut macs = 0u64;
    for b in 0..batch {
        let mask = &key_mask[b * seq..(b + 1) * seq];
        for h in 0..heads {
            let off = h * a;
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let qi = &q[(b * seq + i) * d + off..][..a];
                let prow = &mut probs[pbase + i * seq..][..seq];
                let mut max = T::neg_infinity();
                for j in 0..seq {
                    let kj = &k[(b * seq + j) * d + off..][..a];
                    let mut s = qi.iter().zip(kj).map(|(&x, &y)| x * y).sum::<T>() * scale;
                    if !mask[j] {
                        s = s + bias;
                    }
                    prow[j] = s;
                    max = max.max(s);
                }
                let mut total = T::zero();
                for p in prow.iter_mut() {
                    *p = (*p - max).exp();
                    total = total + *p;
                }
                let oi = &mut out[(b * seq + i) * d + off..][..a];
                for j in 0..seq {
                    prow[j] = prow[j] / total;
                    let w = prow[j];
                    let vj = &v[(b * seq + j) * d + off..][..a];
                    for (o, &x) in oi.iter_mut().zip(vj) {
                        *o = *o + w * x;
                    }
                }
                macs += 2 * (seq * a) as u64;
            }
        }
    }
    (out, probs, macs)
}

/// Accumulates into whichever of `gq`, `gk`, `gv` is non-empty.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Scalar>(
    g: &[T],
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    batch: usize,
    seq: usize,
    d: usize,
    heads: usize,
    gq: &mut [T],
    gk: &mut [T],
    gv: &mut [T],
) {
    let a = d / heads;
    let scale = T::one() / T::from_usize(a).unwrap().sqrt();
    let want_q = !gq.is_empty();
    let want_k = !gk.is_empty();
    let want_v = !gv.is_empty();
    let mut dp = vec![T::zero(); seq];
    for b in 0..batch {
        for h in 0..heads {
            let off = h * a;
            let pbase = (b * heads + h) * seq * seq;
            for i in 0..seq {
                let gi = &g[(b * seq + i) * d + off..][..a];
                let prow = &probs[pbase + i * seq..][..seq];
                let mut dot = T::zero();
                for j in 0..seq {
                    let vj = &v[(b * seq + j) * d + off..][..a];
                    dp[j] = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                    dot = dot + dp[j] * prow[j];
                    if want_v {
                        let gvj = &mut gv[(b * seq + j) * d + off..][..a];
                        for (o, &x) in gvj.iter_mut().zip(gi) {
                            *o = *o + prow[j] * x;
                        }
                    }
                }
                if !(want_q || want_k) {
                    continue;
                }
                let qi = &q[(b * seq + i) * d + off..][..a];
                for j in 0..seq {
                    let ds = prow[j] * (dp[j] - dot) * scale;
                    if ds == T::zero() {
                        continue;
                    }
                    if want_q {
                        let kj = &k[(b * seq + j) * d + off..][..a];
                        let gqi = &mut gq[(b * seq + i) * d + off..][..a];
                        for (o, &x) in gqi.iter_mut().zip(kj) {
                            *o = *o + ds * x;
                        }
                    }
                    if want_k {
                        let gkj = &mut gk[(b * seq + j) * d + off..][..a];
                        for (o, &x) in gkj.iter_mut().zip(qi) {
                            *o = *o + ds * x;
                        }
                    }
                }
            }
        }
    }
}
