//! Candidate scoring for the serving path: per-request DRS batching, the
//! token and score caches, the top-k filter, cache refresh and the bench
//! harness.

mod bench;
mod cache;

pub use bench::{bench, BenchConfig, BenchReport, BenchRow};
pub use cache::{CacheConfig, CacheSnapshot, CacheStats, ScoreCache, ScoreKey, SnapshotEntry};

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::batching::{encode_pair, trim_batch, EncodedPair, PairBatch, Specials};
use crate::data::{top_fraction, LabeledPair};
use crate::error::{Error, Result};
use crate::model::{relevance_score, Checkpoint, Model};
use crate::scalar::Scalar;
use crate::text::{normalize, TokenizedText, Tokenizer};

/// Candidates kept after scoring when a request does not say otherwise.
pub const DEFAULT_MAX_KEEP: usize = 2000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub query: String,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_keep: Option<usize>,
}

/// `scores` and `cache_hits` follow the request order; `kept` lists the
/// indices of the highest scores, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub cache_hits: Vec<bool>,
    pub kept: Vec<usize>,
}

/// Attention work since the scorer was built, in multiply-adds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopTotals {
    /// Counted by the tape while scoring.
    pub executed_attention_macs: u64,
    /// Closed-form estimate for the layouts that were run.
    pub predicted_attention_macs: u64,
    /// Closed-form estimate had every batch run at full padded width.
    pub padded_attention_macs: u64,
    pub pairs_scored: u64,
    pub batches: u64,
}

impl FlopTotals {
    /// `1 − executed/padded`; 0 before any work.
    pub fn savings_ratio(&self) -> f64 {
        if self.padded_attention_macs == 0 {
            0.0
        } else {
            1.0 - self.executed_attention_macs as f64 / self.padded_attention_macs as f64
        }
    }
}

/// Immutable model plus tokenizer, with the serving knobs.
#[derive(Debug)]
pub struct Scorer<T: Scalar> {
    pub model: Model<T>,
    pub tokenizer: Tokenizer,
    /// Cache-key component naming the weights.
    pub checkpoint_id: Arc<str>,
    /// Starts at the model's `score_tau`.
    pub tau: f64,
    pub batch_size: usize,
    /// Trim all-pad columns per batch.
    pub drs: bool,
    flops: Mutex<FlopTotals>,
}

impl<T: Scalar> Scorer<T> {
    pub fn new(model: Model<T>, tokenizer: Tokenizer, checkpoint_id: impl Into<Arc<str>>) -> Result<Self> {
        if model.config.vocab_size != tokenizer.vocab.len() {
            return Err(Error::Config(format!(
                "checkpoint expects {} vocabulary entries, tokenizer has {}",
                model.config.vocab_size,
                tokenizer.vocab.len()
            )));
        }
        Ok(Self {
            tau: model.config.score_tau,
            model,
            tokenizer,
            checkpoint_id: checkpoint_id.into(),
            batch_size: 64,
            drs: true,
            flops: Mutex::new(FlopTotals::default()),
        })
    }

    /// Uses the tokenizer stored in the checkpoint metadata and the
    /// checkpoint fingerprint as its id.
    pub fn from_checkpoint(checkpoint: Checkpoint<T>) -> Result<Self> {
        let tokenizer = Tokenizer::from_meta(
            checkpoint
                .meta
                .get("tokenizer")
                .ok_or_else(|| Error::Checkpoint("metadata lacks \"tokenizer\"".into()))?,
        )?;
        let id = checkpoint.fingerprint()?;
        let model = Model::from_parts(checkpoint.config, checkpoint.params)?;
        Self::new(model, tokenizer, id)
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_drs(mut self, drs: bool) -> Self {
        self.drs = drs;
        self
    }

    pub fn flops(&self) -> FlopTotals {
        *self.flops.lock()
    }

    pub fn reset_flops(&self) {
        *self.flops.lock() = FlopTotals::default();
    }

    fn key(&self, query: &str, title: &str) -> ScoreKey {
        ScoreKey::new(query, title, &self.checkpoint_id, self.tau)
    }

    /// Scores encoded pairs in chunks of `batch_size`, shortest first, and
    /// returns the scores in input order.
    pub fn score_encoded(&self, pairs: &[EncodedPair]) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let specials = Specials::of(&self.tokenizer);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.sort_by_key(|&i| pairs[i].query_tokens.len() + pairs[i].item_tokens.len());
        let tau = T::from_f64_lossy(self.tau);
        let mut out = vec![0.0; pairs.len()];
        for chunk in order.chunks(self.batch_size) {
            let rows: Vec<EncodedPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let batch = PairBatch::new(&rows, &vec![None; rows.len()], cfg.query_len, cfg.item_len, specials)?;
            let padded_len = batch.seq_len();
            let enc = if self.drs { trim_batch(&batch).encoding() } else { batch.encoding() };
            let (logits, counted) = self.model.logits_with_flops(&enc)?;
            let scores = relevance_score(&logits, tau)?;
            for (&i, s) in chunk.iter().zip(scores) {
                out[i] = s.to_f64_lossy();
            }
            let per_layer = |l: usize| (2 * rows.len() * l * l * cfg.hidden) as u64;
            let mut f = self.flops.lock();
            f.executed_attention_macs += counted.attention_macs;
            f.predicted_attention_macs += cfg.layers as u64 * per_layer(enc.seq);
            f.padded_attention_macs += cfg.layers as u64 * per_layer(padded_len);
            f.pairs_scored += rows.len() as u64;
            f.batches += 1;
        }
        Ok(out)
    }

    fn encode_titles(&self, query: &TokenizedText, titles: &[&str]) -> Result<Vec<EncodedPair>> {
        let cfg = &self.model.config;
        titles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                encode_pair(query, &self.tokenizer.encode(t), cfg.query_len, cfg.item_len)
                    .map_err(|e| Error::Input(format!("candidate {i}: {e}")))
            })
            .collect()
    }
}

/// Indices of the `k` highest scores, best first; equal scores keep input
/// order.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Scores every candidate against the query, consulting and filling
/// `cache` when given, then keeps the top `max_keep`.
pub fn score_candidates<T: Scalar>(
    scorer: &Scorer<T>,
    cache: Option<&ScoreCache>,
    request: &ScoreRequest,
) -> Result<ScoreResponse> {
    let max_keep = request.max_keep.unwrap_or(DEFAULT_MAX_KEEP);
    if request.candidates.is_empty() {
        return Ok(ScoreResponse {
            scores: Vec::new(),
            cache_hits: Vec::new(),
            kept: Vec::new(),
        });
    }
    let query = normalize(&request.query);
    if query.is_empty() {
        return Err(Error::Input("query is empty after normalization".into()));
    }
    let titles: Vec<String> = request.candidates.iter().map(|c| normalize(c)).collect();
    if let Some(i) = titles.iter().position(String::is_empty) {
        return Err(Error::Input(format!("candidate {i} is empty after normalization")));
    }

    let cached: Vec<Option<f64>> = match cache {
        Some(c) => {
            let keys: Vec<ScoreKey> = titles.iter().map(|t| scorer.key(&query, t)).collect();
            c.scores(&keys)
        }
        None => vec![None; titles.len()],
    };
    let misses: Vec<usize> = (0..titles.len()).filter(|&i| cached[i].is_none()).collect();
    let mut scores: Vec<f64> = cached.iter().map(|s| s.unwrap_or(0.0)).collect();
    if !misses.is_empty() {
        let tokens = query_tokens(scorer, cache, &query);
        let miss_titles: Vec<&str> = misses.iter().map(|&i| titles[i].as_str()).collect();
        let encoded = scorer.encode_titles(&tokens, &miss_titles)?;
        let fresh = scorer.score_encoded(&encoded)?;
        for (&i, &s) in misses.iter().zip(&fresh) {
            scores[i] = s;
        }
        if let Some(c) = cache {
            c.insert_scores(misses.iter().zip(&fresh).map(|(&i, &s)| (scorer.key(&query, &titles[i]), s)));
        }
    }
    Ok(ScoreResponse {
        kept: top_k(&scores, max_keep),
        cache_hits: cached.iter().map(Option::is_some).collect(),
        scores,
    })
}

fn query_tokens<T: Scalar>(scorer: &Scorer<T>, cache: Option<&ScoreCache>, query: &str) -> Arc<TokenizedText> {
    if let Some(hit) = cache.and_then(|c| c.query_tokens(query)) {
        return hit;
    }
    let tokens = Arc::new(scorer.tokenizer.encode(query));
    if let Some(c) = cache {
        c.insert_query(query.to_string(), Arc::clone(&tokens));
    }
    tokens
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefreshConfig {
    /// Leading share of the ranked query list whose tokens are precomputed.
    pub top_fraction: f64,
    /// Most pair scores precomputed.
    pub pair_budget: usize,
}

impl Default for RefreshConfig {
    fn default() -> Self {
        Self {
            top_fraction: 0.2,
            pair_budget: 100_000,
        }
    }
}

/// Builds a fresh cache: tokens for the top share of `ranked_queries` and
/// scores for the most frequent `(query, title)` pairs of `history`, up to
/// the budget. Pair frequency is the co-occurrence count in `history`,
/// ties broken lexicographically.
pub fn refresh_cache<T: Scalar>(
    scorer: &Scorer<T>,
    ranked_queries: &[(String, u64)],
    history: &[LabeledPair],
    cache_config: CacheConfig,
    config: &RefreshConfig,
) -> Result<ScoreCache> {
    let cache = ScoreCache::new(cache_config);
    for (q, _) in top_fraction(ranked_queries, config.top_fraction) {
        let q = normalize(q);
        if !q.is_empty() {
            let tokens = Arc::new(scorer.tokenizer.encode(&q));
            cache.insert_query(q, tokens);
        }
    }

    let mut counts: HashMap<(String, String), u64> = HashMap::new();
    for p in history {
        let (q, t) = (normalize(&p.query), normalize(&p.title));
        if !q.is_empty() && !t.is_empty() {
            *counts.entry((q, t)).or_default() += 1;
        }
    }
    let mut pairs: Vec<((String, String), u64)> = counts.into_iter().collect();
    pairs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    pairs.truncate(config.pair_budget.min(cache_config.score_capacity));

    // one scoring call per query keeps batch composition per-query, as on
    // the request path
    let mut by_query: Vec<(String, Vec<String>)> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for ((q, t), _) in pairs {
        let i = *slot.entry(q.clone()).or_insert_with(|| {
            by_query.push((q, Vec::new()));
            by_query.len() - 1
        });
        by_query[i].1.push(t);
    }
    for (q, titles) in by_query.into_iter().rev() {
        let tokens = scorer.tokenizer.encode(&q);
        let refs: Vec<&str> = titles.iter().map(String::as_str).collect();
        let encoded = scorer.encode_titles(&tokens, &refs)?;
        let scores = scorer.score_encoded(&encoded)?;
        cache.insert_scores(titles.iter().zip(scores).map(|(t, s)| (scorer.key(&q, t), s)));
    }
    cache.reset_stats();
    Ok(cache)
}

/// Rebuilds a cache from a snapshot, re-tokenizing the stored queries.
/// Entries whose digest does not parse are rejected.
pub fn restore_cache(snapshot: &CacheSnapshot, tokenizer: &Tokenizer) -> Result<ScoreCache> {
    let cache = ScoreCache::new(snapshot.config);
    for q in &snapshot.queries {
        cache.insert_query(q.clone(), Arc::new(tokenizer.encode(q)));
    }
    let mut entries = Vec::with_capacity(snapshot.scores.len());
    for (i, e) in snapshot.scores.iter().enumerate() {
        let title_hash = cache::parse_hash(&e.title_sha256)
            .ok_or_else(|| Error::Input(format!("snapshot entry {i}: malformed title digest")))?;
        entries.push((
            ScoreKey {
                query: e.query.clone(),
                title_hash,
                checkpoint: Arc::from(e.checkpoint.as_str()),
                tau_bits: e.tau.to_bits(),
            },
            e.score,
        ));
    }
    cache.insert_scores(entries);
    Ok(cache)
}

/// Latency distribution in milliseconds; percentiles use the nearest-rank
/// rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub count: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

pub fn latency_summary(samples: &[Duration]) -> LatencySummary {
    if samples.is_empty() {
        return LatencySummary::default();
    }
    let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    ms.sort_by(f64::total_cmp);
    let rank = |p: f64| ms[((p * ms.len() as f64).ceil() as usize).clamp(1, ms.len()) - 1];
    LatencySummary {
        count: ms.len(),
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        p50_ms: rank(0.5),
        p90_ms: rank(0.9),
        p99_ms: rank(0.99),
        max_ms: ms[ms.len() - 1],
    }
}
