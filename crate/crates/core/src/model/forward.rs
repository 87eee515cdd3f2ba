use super::{EncoderParams, EncoderWeights, ModelConfig};
use crate::compute::{RngState, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::PAD_ID;

/// Id grids of a batch, flattened row-major `[batch × seq]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InputEncoding {
    pub batch: usize,
    pub seq: usize,
    pub tokens: Vec<u32>,
    pub segments: Vec<u32>,
    pub positions: Vec<u32>,
    pub ner: Vec<u32>,
    /// `true` for real tokens, `false` for [PAD].
    pub mask: Vec<bool>,
}

impl InputEncoding {
    /// Shapes agree, the mask marks exactly the non-[PAD] tokens, and every
    /// id fits its table.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.batch * self.seq;
        if self.batch == 0 || self.seq == 0 {
            return Err(Error::Input("empty encoding".into()));
        }
        for (name, len) in [
            ("tokens", self.tokens.len()),
            ("segments", self.segments.len()),
            ("positions", self.positions.len()),
            ("ner", self.ner.len()),
            ("mask", self.mask.len()),
        ] {
            if len != n {
                return Err(Error::dim(format!("{name} has {len} entries, expected {n}")));
            }
        }
        if self.seq > config.max_positions {
            return Err(Error::Config(format!(
                "sequence length {} exceeds max_positions {}",
                self.seq, config.max_positions
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.mask[i] != (self.tokens[i] != PAD_ID)) {
            return Err(Error::Input(format!("mask disagrees with [PAD] at flat index {i}")));
        }
        for (what, ids, size) in [
            ("token", &self.tokens, config.vocab_size),
            ("segment", &self.segments, config.segments),
            ("position", &self.positions, config.max_positions),
            ("ner tag", &self.ner, config.ner_tags),
        ] {
            if let Some(&bad) = ids.iter().find(|&&id| id as usize >= size) {
                return Err(Error::Bounds {
                    what,
                    index: bad as usize,
                    size,
                });
            }
        }
        Ok(())
    }

    /// Rows `rows` as a new encoding.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |v: &[u32]| rows.iter().flat_map(|&r| v[r * self.seq..][..self.seq].iter().copied()).collect();
        Self {
            batch: rows.len(),
            seq: self.seq,
            tokens: pick(&self.tokens),
            segments: pick(&self.segments),
            positions: pick(&self.positions),
            ner: pick(&self.ner),
            mask: rows
                .iter()
                .flat_map(|&r| self.mask[r * self.seq..][..self.seq].iter().copied())
                .collect(),
        }
    }
}

/// Handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[batch, 2]` class logits.
    pub logits: Var,
    /// Input embedding `x` after layer norm and dropout, before any
    /// perturbation; `[batch·seq, hidden]`.
    pub embeddings: Var,
}

fn ids(v: &[u32]) -> Vec<usize> {
    v.iter().map(|&i| i as usize).collect()
}

/// Sum of the four embeddings, then layer norm and dropout.
pub fn embed_inputs<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderWeights<Var>,
    config: &ModelConfig,
    enc: &InputEncoding,
    training: bool,
    rng: &mut RngState,
) -> Result<Var> {
    enc.validate(config)?;
    let e = &params.embeddings;
    let tok = tape.gather(e.token, &ids(&enc.tokens))?;
    let seg = tape.gather(e.segment, &ids(&enc.segments))?;
    let pos = tape.gather(e.position, &ids(&enc.positions))?;
    let ner = tape.gather(e.ner, &ids(&enc.ner))?;
    let sum = tape.add(tok, seg)?;
    let sum = tape.add(sum, pos)?;
    let sum = tape.add(sum, ner)?;
    let x = tape.layer_norm(sum, e.ln_g, e.ln_b, config.layer_norm_eps)?;
    tape.dropout(x, config.dropout, rng, training)
}

/// Records a full forward pass. `perturbation`, when given, is added to the
/// input embedding (the adversarial example path).
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &EncoderWeights<Var>,
    config: &ModelConfig,
    enc: &InputEncoding,
    training: bool,
    rng: &mut RngState,
    perturbation: Option<&Tensor<T>>,
) -> Result<ForwardOutput> {
    let x = embed_inputs(tape, params, config, enc, training, rng)?;
    let mut h = match perturbation {
        Some(r) => tape.add_const(x, r)?,
        None => x,
    };
    let (n, l, d) = (enc.batch, enc.seq, config.hidden);
    for layer in &params.layers {
        let proj = |tape: &mut Tape<T>, w: Var, b: Var| -> Result<Var> {
            let y = tape.matmul(h, w)?;
            let y = tape.add_row(y, b)?;
            tape.reshape(y, &[n, l, d])
        };
        let q = proj(tape, layer.wq, layer.bq)?;
        let k = proj(tape, layer.wk, layer.bk)?;
        let v = proj(tape, layer.wv, layer.bv)?;
        let att = tape.attention(q, k, v, &enc.mask, config.heads)?;
        let att = tape.reshape(att, &[n * l, d])?;
        let o = tape.matmul(att, layer.wo)?;
        let o = tape.add_row(o, layer.bo)?;
        let o = tape.dropout(o, config.dropout, rng, training)?;
        let r = tape.add(h, o)?;
        h = tape.layer_norm(r, layer.ln1_g, layer.ln1_b, config.layer_norm_eps)?;

        let f = tape.matmul(h, layer.w1)?;
        let f = tape.add_row(f, layer.b1)?;
        let f = tape.gelu(f)?;
        let f = tape.matmul(f, layer.w2)?;
        let f = tape.add_row(f, layer.b2)?;
        let f = tape.dropout(f, config.dropout, rng, training)?;
        let r = tape.add(h, f)?;
        h = tape.layer_norm(r, layer.ln2_g, layer.ln2_b, config.layer_norm_eps)?;
    }
    let cls_rows: Vec<usize> = (0..n).map(|b| b * l).collect();
    let cls = tape.gather(h, &cls_rows)?;
    let logits = tape.matmul(cls, params.head.w)?;
    let logits = tape.add_row(logits, params.head.b)?;
    Ok(ForwardOutput { logits, embeddings: x })
}

/// Places every parameter on the tape as a trainable leaf.
pub fn params_on_tape<T: Scalar>(tape: &mut Tape<T>, params: &EncoderParams<T>) -> EncoderWeights<Var> {
    params.map(|_, t| tape.param(t.clone()))
}

/// Places every parameter on the tape as a constant (inference).
pub fn constants_on_tape<T: Scalar>(tape: &mut Tape<T>, params: &EncoderParams<T>) -> EncoderWeights<Var> {
    params.map(|_, t| tape.constant(t.clone()))
}
