use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::hex;
use crate::text::TokenizedText;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    /// Tokenized queries kept.
    pub query_capacity: usize,
    /// Pair scores kept.
    pub score_capacity: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            query_capacity: 4096,
            score_capacity: 262_144,
        }
    }
}

/// Identifies one cached score: the normalized query, a digest of the
/// normalized title, the model version and the temperature bits. A new
/// checkpoint changes every key, so old entries simply age out.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ScoreKey {
    pub query: String,
    pub title_hash: [u8; 32],
    pub checkpoint: Arc<str>,
    pub tau_bits: u64,
}

impl ScoreKey {
    pub fn new(normalized_query: &str, normalized_title: &str, checkpoint: &Arc<str>, tau: f64) -> Self {
        Self {
            query: normalized_query.to_string(),
            title_hash: Sha256::digest(normalized_title.as_bytes()).into(),
            checkpoint: Arc::clone(checkpoint),
            tau_bits: tau.to_bits(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub query_hits: u64,
    pub query_misses: u64,
    pub scores: usize,
    pub queries: usize,
}

impl CacheStats {
    /// Score hits over score lookups; 0 before any lookup.
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

struct Stores {
    queries: LruCache<String, Arc<TokenizedText>>,
    scores: LruCache<ScoreKey, f64>,
    stats: CacheStats,
}

impl Stores {
    fn new(config: &CacheConfig) -> Self {
        let cap = |n: usize| NonZeroUsize::new(n.max(1)).expect("at least one");
        Self {
            queries: LruCache::new(cap(config.query_capacity)),
            scores: LruCache::new(cap(config.score_capacity)),
            stats: CacheStats::default(),
        }
    }
}

/// Least-recently-used stores of tokenized queries and pair scores. All
/// access goes through one lock, so a refresh swaps the whole content
/// atomically.
pub struct ScoreCache {
    config: CacheConfig,
    stores: Mutex<Stores>,
}

impl std::fmt::Debug for ScoreCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoreCache").field("config", &self.config).field("stats", &self.stats()).finish()
    }
}

impl ScoreCache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            stores: Mutex::new(Stores::new(&config)),
            config,
        }
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    pub fn query_tokens(&self, normalized_query: &str) -> Option<Arc<TokenizedText>> {
        let mut s = self.stores.lock();
        let hit = s.queries.get(normalized_query).cloned();
        if hit.is_some() {
            s.stats.query_hits += 1;
        } else {
            s.stats.query_misses += 1;
        }
        hit
    }

    pub fn insert_query(&self, normalized_query: String, tokens: Arc<TokenizedText>) {
        self.stores.lock().queries.put(normalized_query, tokens);
    }

    /// Looks up every key under one lock; counts hits and misses.
    pub fn scores(&self, keys: &[ScoreKey]) -> Vec<Option<f64>> {
        let mut s = self.stores.lock();
        let out: Vec<Option<f64>> = keys.iter().map(|k| s.scores.get(k).copied()).collect();
        let hits = out.iter().filter(|x| x.is_some()).count() as u64;
        s.stats.hits += hits;
        s.stats.misses += out.len() as u64 - hits;
        out
    }

    pub fn insert_scores(&self, entries: impl IntoIterator<Item = (ScoreKey, f64)>) {
        let mut s = self.stores.lock();
        for (k, v) in entries {
            s.scores.put(k, v);
        }
    }

    pub fn stats(&self) -> CacheStats {
        let s = self.stores.lock();
        CacheStats {
            scores: s.scores.len(),
            queries: s.queries.len(),
            ..s.stats
        }
    }

    pub fn reset_stats(&self) {
        self.stores.lock().stats = CacheStats::default();
    }

    pub fn len(&self) -> usize {
        self.stores.lock().scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Takes over the content of `fresh` in one step; readers see either
    /// the old or the new content, never a mix.
    pub fn replace_with(&self, fresh: ScoreCache) {
        let new = fresh.stores.into_inner();
        *self.stores.lock() = new;
    }

    /// Serializable copy, least recently used first so that restoring
    /// reproduces the recency order.
    pub fn snapshot(&self) -> CacheSnapshot {
        let s = self.stores.lock();
        CacheSnapshot {
            config: self.config,
            queries: s.queries.iter().rev().map(|(q, _)| q.clone()).collect(),
            scores: s
                .scores
                .iter()
                .rev()
                .map(|(k, &score)| SnapshotEntry {
                    query: k.query.clone(),
                    title_sha256: hex(&k.title_hash),
                    checkpoint: k.checkpoint.to_string(),
                    tau: f64::from_bits(k.tau_bits),
                    score,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub query: String,
    pub title_sha256: String,
    pub checkpoint: String,
    pub tau: f64,
    pub score: f64,
}

/// On-disk form of a cache. Query tokens are not stored; they are
/// recomputed on restore.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheSnapshot {
    pub config: CacheConfig,
    pub queries: Vec<String>,
    pub scores: Vec<SnapshotEntry>,
}

pub(crate) fn parse_hash(hex_digest: &str) -> Option<[u8; 32]> {
    if hex_digest.len() != 64 || !hex_digest.is_ascii() {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex_digest[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}
