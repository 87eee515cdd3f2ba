//! Cross-encoder: summed token/segment/position/NER embeddings, post-LN
//! transformer layers and a two-class head over [CLS].

mod checkpoint;
mod config;
mod forward;
mod params;

pub use checkpoint::{checkpoint_dtype, Checkpoint};
pub(crate) use checkpoint::hex;
pub use config::ModelConfig;
pub use forward::{constants_on_tape, embed_inputs, forward, params_on_tape, ForwardOutput, InputEncoding};
pub use params::{
    check_shapes, init_params, param_count, param_shapes, EmbeddingWeights, EncoderParams, EncoderWeights,
    HeadWeights, LayerWeights,
};

use serde::{Deserialize, Serialize};

use crate::compute::{self, FlopCounter, RngState, Tape, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Configuration plus weights, with eval-mode scoring helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: EncoderParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: EncoderParams<T>) -> Result<Self> {
        config.validate()?;
        check_shapes(&config, &params)?;
        Ok(Self { config, params })
    }

    /// Eval-mode logits `[batch, 2]` and the executed FLOP counts.
    pub fn logits_with_flops(&self, enc: &InputEncoding) -> Result<(Tensor<T>, FlopCounter)> {
        let mut tape = Tape::new();
        let vars = constants_on_tape(&mut tape, &self.params);
        // dropout is inactive in eval mode, so the stream is never drawn from
        let mut rng = RngState::new(0);
        let out = forward(&mut tape, &vars, &self.config, enc, false, &mut rng, None)?;
        Ok((tape.value(out.logits).clone(), tape.flops()))
    }

    pub fn logits(&self, enc: &InputEncoding) -> Result<Tensor<T>> {
        Ok(self.logits_with_flops(enc)?.0)
    }

    /// Relevance probabilities at temperature `tau`.
    pub fn scores(&self, enc: &InputEncoding, tau: T) -> Result<Vec<T>> {
        relevance_score(&self.logits(enc)?, tau)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.map(|_, t| t.cast()),
        }
    }

    pub fn checkpoint(&self, meta: serde_json::Value) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
            meta,
        }
    }
}

/// `p(relevant) = exp(τ·z₁) / (exp(τ·z₀) + exp(τ·z₁))` per row.
pub fn relevance_score<T: Scalar>(logits: &Tensor<T>, tau: T) -> Result<Vec<T>> {
    if logits.ndim() != 2 || logits.cols() != 2 {
        return Err(Error::dim(format!("relevance_score expects [n, 2] logits, got {:?}", logits.shape())));
    }
    let p = compute::softmax(logits, tau)?;
    Ok((0..p.rows()).map(|r| p.row(r)[1]).collect())
}

/// Closed-form FLOP counts (one multiply-add = 2 FLOPs) for a batch of `n`
/// sequences of width `l`, summed over all layers.
///
/// `mha_flops` is the sequence-quadratic part of attention (scores and the
/// weighted sum of values, `4·n·l²·d` per layer), exactly what the tape's
/// attention counter measures. `ffn_flops` is `4·n·l·d·k` per layer and
/// `projection_flops` the four `d×d` projections, `8·n·l·d²` per layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Complexity {
    pub mha_flops: u64,
    pub ffn_flops: u64,
    pub projection_flops: u64,
}

impl Complexity {
    pub fn total(&self) -> u64 {
        self.mha_flops + self.ffn_flops + self.projection_flops
    }
}

pub fn complexity_estimate(config: &ModelConfig, n: usize, l: usize) -> Complexity {
    let (n, l, d, k, layers) = (n as u64, l as u64, config.hidden as u64, config.ffn as u64, config.layers as u64);
    Complexity {
        mha_flops: layers * 4 * n * l * l * d,
        ffn_flops: layers * 4 * n * l * d * k,
        projection_flops: layers * 8 * n * l * d * d,
    }
}

#[cfg(test)]
pub(crate) mod tests;
