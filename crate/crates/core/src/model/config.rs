use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder architecture and input layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    /// Model width `d`.
    pub hidden: usize,
    /// Attention heads `m`.
    pub heads: usize,
    /// Per-head width `a`; `hidden == heads * head_dim`.
    pub head_dim: usize,
    /// FFN inner width `k`.
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub ner_tags: usize,
    pub segments: usize,
    /// Query sub-token budget `l_q`.
    pub query_len: usize,
    /// Item sub-token budget `l_i`.
    pub item_len: usize,
    pub dropout: f64,
    /// Default heated-softmax temperature for scoring.
    pub score_tau: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    /// L3-H128-A4 with a 16/36 query/item layout.
    fn default() -> Self {
        Self {
            layers: 3,
            hidden: 128,
            heads: 4,
            head_dim: 32,
            ffn: 512,
            vocab_size: 512,
            max_positions: 64,
            ner_tags: crate::text::NER_VOCAB,
            segments: 2,
            query_len: 16,
            item_len: 36,
            dropout: 0.1,
            score_tau: 1.0,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    /// Two layers of width 8, for gradient checks and fast tests.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 8,
            heads: 2,
            head_dim: 4,
            ffn: 16,
            vocab_size,
            max_positions: 24,
            query_len: 6,
            item_len: 12,
            ..Self::default()
        }
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    /// Padded sequence width `l_q + l_i + 3`.
    pub fn seq_len(&self) -> usize {
        self.query_len + self.item_len + 3
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("ffn", self.ffn),
            ("vocab_size", self.vocab_size),
            ("ner_tags", self.ner_tags),
            ("segments", self.segments),
            ("query_len", self.query_len),
            ("item_len", self.item_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden != self.heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden {} != heads {} x head_dim {}",
                self.hidden, self.heads, self.head_dim
            )));
        }
        if self.max_positions < self.seq_len() {
            return Err(Error::Config(format!(
                "max_positions {} < query_len + item_len + 3 = {}",
                self.max_positions,
                self.seq_len()
            )));
        }
        if self.segments < 2 {
            return Err(Error::Config("need two segments".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.score_tau > 0.0 && self.score_tau.is_finite()) {
            return Err(Error::Config(format!("score_tau {} must be positive", self.score_tau)));
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::Config("layer_norm_eps must be positive and init_std nonnegative".into()));
        }
        Ok(())
    }
}
