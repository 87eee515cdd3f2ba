//! A scorer whose precision is chosen by the checkpoint file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use relevance::data::LabeledPair;
use relevance::eval::{evaluate, MetricReport};
use relevance::model::{checkpoint_dtype, Checkpoint};
use relevance::serve::{
    bench, refresh_cache, score_candidates, BenchConfig, BenchReport, CacheConfig, FlopTotals, RefreshConfig,
    ScoreCache, ScoreRequest, ScoreResponse, Scorer,
};
use relevance::text::Tokenizer;
use relevance::Scalar;

#[derive(Debug)]
pub enum AnyScorer {
    F32(Scorer<f32>),
    F64(Scorer<f64>),
}

macro_rules! each {
    ($self:expr, $s:ident => $body:expr) => {
        match $self {
            AnyScorer::F32($s) => $body,
            AnyScorer::F64($s) => $body,
        }
    };
}

impl AnyScorer {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Ok(match checkpoint_dtype(bytes)?.as_str() {
            "f32" => Self::F32(Scorer::from_checkpoint(Checkpoint::from_bytes(bytes)?)?),
            "f64" => Self::F64(Scorer::from_checkpoint(Checkpoint::from_bytes(bytes)?)?),
            other => bail!("unsupported checkpoint precision {other:?}"),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("loading {}", path.display()))
    }

    pub fn configure(self, tau: Option<f64>, batch_size: Option<usize>, drs: Option<bool>) -> Self {
        fn apply<T: Scalar>(mut s: Scorer<T>, tau: Option<f64>, batch_size: Option<usize>, drs: Option<bool>) -> Scorer<T> {
            if let Some(t) = tau {
                s = s.with_tau(t);
            }
            if let Some(b) = batch_size {
                s = s.with_batch_size(b);
            }
            if let Some(d) = drs {
                s = s.with_drs(d);
            }
            s
        }
        match self {
            Self::F32(s) => Self::F32(apply(s, tau, batch_size, drs)),
            Self::F64(s) => Self::F64(apply(s, tau, batch_size, drs)),
        }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        each!(self, s => &s.tokenizer)
    }

    pub fn checkpoint_id(&self) -> &str {
        each!(self, s => &s.checkpoint_id)
    }

    pub fn tau(&self) -> f64 {
        each!(self, s => s.tau)
    }

    pub fn flops(&self) -> FlopTotals {
        each!(self, s => s.flops())
    }

    pub fn score(&self, cache: Option<&ScoreCache>, request: &ScoreRequest) -> relevance::Result<ScoreResponse> {
        each!(self, s => score_candidates(s, cache, request))
    }

    pub fn evaluate(&self, pairs: &[LabeledPair], threshold: f64) -> relevance::Result<MetricReport> {
        each!(self, s => evaluate(&s.model, &s.tokenizer, pairs, s.tau, threshold))
    }

    pub fn bench(&self, pairs: &[LabeledPair], config: &BenchConfig) -> relevance::Result<BenchReport> {
        each!(self, s => bench(&s.model, &s.tokenizer, pairs, config))
    }

    pub fn refresh(
        &self,
        ranked: &[(String, u64)],
        history: &[LabeledPair],
        cache: CacheConfig,
        refresh: &RefreshConfig,
    ) -> relevance::Result<ScoreCache> {
        each!(self, s => refresh_cache(s, ranked, history, cache, refresh))
    }
}
