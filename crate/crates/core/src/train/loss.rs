use serde::{Deserialize, Serialize};

use crate::compute::{RngState, Tape, Tensor, Var, KL_FLOOR};
use crate::error::{Error, Result};
use crate::model::{constants_on_tape, forward, InputEncoding, Model};
use crate::scalar::Scalar;

/// Floor applied to probabilities under the log in [`bce_loss`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Loss components of one step and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bce: f64,
    pub l_ate: f64,
    pub l_adv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_bce, self.l_ate, self.l_adv, self.total].iter().all(|x| x.is_finite())
    }
}

/// `α₁·l_bce + α₂·l_ate + α₃·l_adv`, evaluated left to right.
pub fn total_loss(l_bce: f64, l_ate: f64, l_adv: f64, alpha: [f64; 3]) -> LossBreakdown {
    LossBreakdown {
        l_bce,
        l_ate,
        l_adv,
        total: alpha[0] * l_bce + alpha[1] * l_ate + alpha[2] * l_adv,
    }
}

/// Mean negative log-likelihood of binary labels given relevance
/// probabilities `p(y=1)`.
pub fn bce_loss<T: Scalar>(probs: &[T], labels: &[u8]) -> Result<T> {
    if probs.len() != labels.len() {
        return Err(Error::dim(format!("{} probabilities, {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Input("bce_loss of an empty batch".into()));
    }
    let floor = T::from_f64_lossy(PROB_FLOOR);
    let mut sum = T::zero();
    for (&p, &y) in probs.iter().zip(labels) {
        let py = if y == 1 { p } else { T::one() - p };
        sum = sum - py.max(floor).ln();
    }
    Ok(sum / T::from_usize(probs.len()).expect("batch size fits"))
}

/// `−ε·g/‖g‖₂` for each leading-axis slice of `grad`, so every nonzero row
/// of the result has norm `ε` and points against its gradient. Rows with a
/// zero gradient get a zero perturbation.
pub fn adversarial_perturbation<T: Scalar>(grad: &Tensor<T>, epsilon: T) -> Result<Tensor<T>> {
    if !(epsilon >= T::zero() && epsilon.is_finite()) {
        return Err(Error::param("epsilon must be finite and nonnegative"));
    }
    if grad.ndim() == 0 || grad.shape()[0] == 0 {
        return Err(Error::dim(format!("perturbation needs a batch axis, got {:?}", grad.shape())));
    }
    let n = grad.shape()[0];
    let width = grad.len() / n;
    let mut out = grad.clone();
    for row in out.data_mut().chunks_mut(width) {
        let norm = row.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if norm == T::zero() {
            row.fill(T::zero());
        } else {
            let s = -epsilon / norm;
            row.iter_mut().for_each(|x| *x = *x * s);
        }
    }
    Ok(out)
}

/// `0.5·mean_i [D(pᵢ‖qᵢ) + D(qᵢ‖pᵢ)]` over rows of two distributions.
pub fn adv_kl_loss<T: Scalar>(p_clean: &Tensor<T>, p_adv: &Tensor<T>) -> Result<T> {
    if p_clean.shape() != p_adv.shape() || p_clean.ndim() != 2 || p_clean.rows() == 0 {
        return Err(Error::dim(format!(
            "adv_kl_loss needs equal [n, c] shapes, got {:?} and {:?}",
            p_clean.shape(),
            p_adv.shape()
        )));
    }
    let tol = T::from_f64_lossy(1e-6);
    let floor = T::from_f64_lossy(KL_FLOOR);
    let mut sum = T::zero();
    for r in 0..p_clean.rows() {
        let (p, q) = (p_clean.row(r), p_adv.row(r));
        for row in [p, q] {
            let s = row.iter().fold(T::zero(), |a, &x| a + x);
            if (s - T::one()).abs() > tol || row.iter().any(|&x| x < T::zero()) {
                return Err(Error::contract(format!("row {r} is not a distribution (sums to {s:?})")));
            }
        }
        for (&a, &b) in p.iter().zip(q) {
            sum = sum + (a - b) * ((a + floor).ln() - (b + floor).ln());
        }
    }
    let half = T::from_f64_lossy(0.5);
    Ok(half * sum / T::from_usize(p_clean.rows()).expect("rows fit"))
}

/// Records `−mean log p(y|x)` at temperature `tau`; returns the log-probs,
/// the picked log-likelihoods and the loss.
pub(crate) fn nll<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize], tau: T) -> Result<(Var, Var, Var)> {
    let lp = tape.log_softmax(logits, tau)?;
    let picked = tape.pick_cols(lp, labels)?;
    let m = tape.mean(picked)?;
    let loss = tape.scale(m, -T::one())?;
    Ok((lp, picked, loss))
}

/// Clean-pass quantities used to build a perturbation.
#[derive(Clone, Debug)]
pub struct InputGradient<T: Scalar> {
    pub loss: T,
    /// Gradient of `Σᵢ log p(yᵢ|xᵢ)` with respect to the input embedding,
    /// `[n, l, d]`.
    pub grad: Tensor<T>,
    pub logits: Tensor<T>,
}

/// One forward pass and the gradient of the log-likelihood with respect to
/// the input embedding, with parameters held fixed.
pub fn input_gradient<T: Scalar>(
    model: &Model<T>,
    enc: &InputEncoding,
    labels: &[usize],
    tau: T,
    training: bool,
    rng: &mut RngState,
) -> Result<InputGradient<T>> {
    let mut tape = Tape::new();
    let vars = constants_on_tape(&mut tape, &model.params);
    let out = forward(&mut tape, &vars, &model.config, enc, training, rng, None)?;
    let (_, picked, loss) = nll(&mut tape, out.logits, labels, tau)?;
    let ll = tape.sum(picked)?;
    let mut g = tape.grad_wrt(ll, &[out.embeddings])?;
    let grad = g.take(out.embeddings).expect("requested gradient").reshape([enc.batch, enc.seq, model.config.hidden])?;
    Ok(InputGradient {
        loss: tape.value(loss).item()?,
        grad,
        logits: tape.value(out.logits).clone(),
    })
}

/// Cross-entropy of the model evaluated on the input embedding plus
/// `r_adv` (`[n, l, d]` or `[n·l, d]`).
pub fn ate_loss<T: Scalar>(
    model: &Model<T>,
    enc: &InputEncoding,
    r_adv: &Tensor<T>,
    labels: &[usize],
    tau: T,
    training: bool,
    rng: &mut RngState,
) -> Result<T> {
    let (n, d) = (enc.batch * enc.seq, model.config.hidden);
    if r_adv.len() != n * d {
        return Err(Error::dim(format!(
            "perturbation of shape {:?} does not match {} embedding rows of width {d}",
            r_adv.shape(),
            n
        )));
    }
    let r = r_adv.reshape([n, d])?;
    let mut tape = Tape::new();
    let vars = constants_on_tape(&mut tape, &model.params);
    let out = forward(&mut tape, &vars, &model.config, enc, training, rng, Some(&r))?;
    let (_, _, loss) = nll(&mut tape, out.logits, labels, tau)?;
    tape.value(loss).item()
}
