use serde_json::json;

use super::config::{AdamConfig, TrainConfig};
use super::loss::{adversarial_perturbation, nll, total_loss, LossBreakdown};
use crate::compute::{Gradients, RngState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{forward, params_on_tape, EncoderParams, EncoderWeights, InputEncoding, ModelConfig};
use crate::scalar::Scalar;

/// Adam first and second moments, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Scalar> {
    pub m: EncoderParams<T>,
    pub v: EncoderParams<T>,
    /// Updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &EncoderParams<T>) -> Self {
        let zeros = params.map(|_, p| Tensor::zeros(p.shape().to_vec()));
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update; `grads` follows the order of
    /// [`EncoderWeights::named`].
    pub fn update(&mut self, params: &mut EncoderParams<T>, grads: &[Tensor<T>], lr: f64, cfg: &AdamConfig) -> Result<()> {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let (b1, b2) = (T::from_f64_lossy(cfg.beta1), T::from_f64_lossy(cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let (lr, eps) = (T::from_f64_lossy(lr), T::from_f64_lossy(cfg.eps));
        let ps = params.values_mut();
        if ps.len() != grads.len() {
            return Err(Error::dim(format!("{} parameters, {} gradients", ps.len(), grads.len())));
        }
        for (((p, m), v), g) in ps.into_iter().zip(self.m.values_mut()).zip(self.v.values_mut()).zip(grads) {
            if g.shape() != p.shape() {
                return Err(Error::dim(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] = p[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Everything the loop mutates: weights, optimizer moments, counters and
/// the dropout stream.
#[derive(Clone, Debug)]
pub struct TrainState<T: Scalar> {
    pub params: EncoderParams<T>,
    pub adam: Adam<T>,
    /// Completed optimizer steps.
    pub step: u64,
    pub best_val_auc: Option<f64>,
    pub epochs_since_improvement: usize,
    /// Dropout masks are drawn from here.
    pub rng: RngState,
    /// Encoder forward passes executed by the step functions.
    pub forward_passes: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: EncoderParams<T>, seed: u64) -> Self {
        Self {
            adam: Adam::new(&params),
            params,
            step: 0,
            best_val_auc: None,
            epochs_since_improvement: 0,
            rng: RngState::new(seed),
            forward_passes: 0,
        }
    }

    /// Records a validation AUC; returns whether it improved on the best.
    pub fn observe_validation(&mut self, auc: f64) -> bool {
        if self.best_val_auc.is_none_or(|b| auc > b) {
            self.best_val_auc = Some(auc);
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }
}

fn collect_grads<T: Scalar>(vars: &EncoderWeights<Var>, grads: &mut Gradients<T>) -> Vec<Tensor<T>> {
    vars.named()
        .into_iter()
        .map(|(_, &v)| grads.take(v).expect("every parameter receives a gradient"))
        .collect()
}

fn diverged(step: u64, enc: &InputEncoding, labels: &[usize], tau: f64, cause: &str) -> Error {
    let dump = json!({
        "step": step,
        "cause": cause,
        "tau": tau,
        "batch": enc.batch,
        "seq": enc.seq,
        "tokens": enc.tokens,
        "ner": enc.ner,
        "labels": labels,
    });
    Error::Diverged {
        step,
        dump: dump.to_string(),
    }
}

fn guard<V>(r: Result<V>, step: u64, enc: &InputEncoding, labels: &[usize], tau: f64) -> Result<V> {
    r.map_err(|e| match e {
        Error::NonFinite(op) => diverged(step, enc, labels, tau, &format!("non-finite value in {op}")),
        other => other,
    })
}

fn scalar<T: Scalar>(tape: &Tape<T>, v: Var) -> f64 {
    tape.value(v).data()[0].to_f64_lossy()
}

/// One contrastive adversarial update.
///
/// Pass 1 runs on the clean embedding `x` and yields the clean cross-entropy
/// and `g = ∇ₓ Σ log p(y|x)` (parameters held fixed). Pass 2 runs on
/// `x + r_adv` with `r_adv = −ε·g/‖g‖` per pair, treated as a constant. Both
/// passes draw identical dropout masks: pass 2 replays a copy of the stream
/// pass 1 consumed. The optimizer then steps on the weighted sum of the three
/// terms; terms with zero weight are reported but left out of the
/// differentiated objective.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    enc: &InputEncoding,
    labels: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<LossBreakdown> {
    let step = state.step;
    let t = T::from_f64_lossy(tau);
    let mut tape = Tape::new();
    let vars = params_on_tape(&mut tape, &state.params);
    let mut replay = state.rng.clone();

    let clean = guard(forward(&mut tape, &vars, model_cfg, enc, true, &mut state.rng, None), step, enc, labels, tau)?;
    state.forward_passes += 1;
    let (lp_clean, picked, l_bce) = guard(nll(&mut tape, clean.logits, labels, t), step, enc, labels, tau)?;
    let ll = tape.sum(picked)?;
    let g = guard(tape.grad_wrt(ll, &[clean.embeddings]), step, enc, labels, tau)?
        .take(clean.embeddings)
        .expect("requested gradient");
    let g = g.reshape([enc.batch, enc.seq, model_cfg.hidden])?;
    let r_adv = adversarial_perturbation(&g, T::from_f64_lossy(cfg.epsilon))?.reshape([enc.batch * enc.seq, model_cfg.hidden])?;

    let adv = guard(forward(&mut tape, &vars, model_cfg, enc, true, &mut replay, Some(&r_adv)), step, enc, labels, tau)?;
    state.forward_passes += 1;
    let (lp_adv, _, l_ate) = guard(nll(&mut tape, adv.logits, labels, t), step, enc, labels, tau)?;
    let kl = guard(tape.symmetric_kl(lp_clean, lp_adv), step, enc, labels, tau)?;
    let kl = tape.mean(kl)?;
    let l_adv = tape.scale(kl, T::from_f64_lossy(0.5))?;

    let breakdown = total_loss(scalar(&tape, l_bce), scalar(&tape, l_ate), scalar(&tape, l_adv), cfg.alpha);
    if !breakdown.is_finite() {
        return Err(diverged(step, enc, labels, tau, "non-finite loss"));
    }
    let mut objective: Option<Var> = None;
    for (term, &a) in [l_bce, l_ate, l_adv].into_iter().zip(&cfg.alpha) {
        if a == 0.0 {
            continue;
        }
        let weighted = tape.scale(term, T::from_f64_lossy(a))?;
        objective = Some(match objective {
            Some(acc) => tape.add(acc, weighted)?,
            None => weighted,
        });
    }
    let Some(objective) = objective else {
        return Err(Error::Config("all loss weights are zero".into()));
    };
    let mut grads = guard(tape.backward(objective), step, enc, labels, tau)?;
    let grads = collect_grads(&vars, &mut grads);
    state.adam.update(&mut state.params, &grads, cfg.learning_rate, &cfg.adam)?;
    state.step += 1;
    Ok(breakdown)
}

/// One plain cross-entropy update: a single pass, no perturbation. The loss
/// is scaled by `α₁` exactly as in [`train_step`].
pub fn bce_train_step<T: Scalar>(
    state: &mut TrainState<T>,
    enc: &InputEncoding,
    labels: &[usize],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    tau: f64,
) -> Result<LossBreakdown> {
    let step = state.step;
    let t = T::from_f64_lossy(tau);
    let mut tape = Tape::new();
    let vars = params_on_tape(&mut tape, &state.params);
    let out = guard(forward(&mut tape, &vars, model_cfg, enc, true, &mut state.rng, None), step, enc, labels, tau)?;
    state.forward_passes += 1;
    let (_, _, l_bce) = guard(nll(&mut tape, out.logits, labels, t), step, enc, labels, tau)?;
    let value = scalar(&tape, l_bce);
    if !value.is_finite() {
        return Err(diverged(step, enc, labels, tau, "non-finite loss"));
    }
    let objective = tape.scale(l_bce, T::from_f64_lossy(cfg.alpha[0]))?;
    let mut grads = guard(tape.backward(objective), step, enc, labels, tau)?;
    let grads = collect_grads(&vars, &mut grads);
    state.adam.update(&mut state.params, &grads, cfg.learning_rate, &cfg.adam)?;
    state.step += 1;
    Ok(total_loss(value, value, 0.0, [cfg.alpha[0], 0.0, 0.0]))
}
