//! Dense tensors, reverse-mode differentiation and seeded randomness.

pub(crate) mod kernels;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use rng::RngState;
pub use tape::{FlopCounter, Gradients, Tape, Var, MASK_BIAS};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor added under the logarithm in [`kl_divergence`].
pub const KL_FLOOR: f64 = 1e-12;

/// Matrix product of a `[.., p]` tensor with a `p×q` matrix.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let out = tape.matmul(va, vb)?;
    Ok(tape.value(out).clone())
}

/// Row-wise heated softmax `exp(τ·zᵢ) / Σⱼ exp(τ·zⱼ)`.
pub fn softmax<T: Scalar>(z: &Tensor<T>, tau: T) -> Result<Tensor<T>> {
    kernels::softmax(z, tau, false)
}

/// `D(p‖q) = Σ pᵢ·(ln(pᵢ+δ) − ln(qᵢ+δ))` with `δ = KL_FLOOR`.
///
/// Terms with `pᵢ = 0` contribute nothing. Rounding noise below zero is
/// clamped, so the result is never negative and is exactly zero for `p = q`.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::dim(format!(
            "kl_divergence: {} vs {} entries",
            p.len(),
            q.len()
        )));
    }
    let floor = T::from_f64_lossy(KL_FLOOR);
    let d: T = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| pi * ((pi + floor).ln() - (qi + floor).ln()))
        .sum();
    Ok(d.max(T::zero()))
}

/// Inverted dropout on a value: survivors are scaled by `1/(1−rate)`.
pub fn dropout<T: Scalar>(x: &Tensor<T>, rate: f64, rng: &mut RngState, training: bool) -> Result<Tensor<T>> {
    match kernels::dropout_mask::<T>(x.len(), rate, rng, training)? {
        None => Ok(x.clone()),
        Some(mask) => {
            let data = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
            Tensor::new(x.shape().to_vec(), data)
        }
    }
}

/// Mean negative log-likelihood of `labels` under the row-wise softmax of
/// `logits` at temperature `tau`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize], tau: T) -> Result<T> {
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone());
    let loss = tape.cross_entropy(z, labels, tau)?;
    tape.value(loss).item()
}
