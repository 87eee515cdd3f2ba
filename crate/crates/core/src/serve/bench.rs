use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{latency_summary, score_candidates, CacheConfig, LatencySummary, ScoreCache, ScoreRequest, Scorer};
use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::text::Tokenizer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub batch_size: usize,
    /// Passes over the request set; with the cache on, every pass after the
    /// first is served warm.
    pub passes: usize,
    pub tau: f64,
    /// Grid axes; each listed value is run.
    pub drs: Vec<bool>,
    pub cache: Vec<bool>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            passes: 2,
            tau: 1.0,
            drs: vec![false, true],
            cache: vec![false, true],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub drs: bool,
    pub cache: bool,
    pub latency: LatencySummary,
    pub total_ms: f64,
    /// Executed attention MACs over the full-width estimate.
    pub measured_mha_ratio: f64,
    /// Closed-form `(l′/l)²` estimate over the full-width estimate.
    pub predicted_mha_ratio: f64,
    pub hit_rate: f64,
    /// From the first pass; `None` when the corpus is unlabeled or
    /// single-class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub requests: usize,
    pub pairs: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, drs: bool, cache: bool) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.drs == drs && r.cache == cache)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} requests, {} pairs; cost is measured as attention FLOPs and CPU wall-clock",
            self.requests, self.pairs
        )?;
        writeln!(
            f,
            "{:<5} {:<5} {:>10} {:>10} {:>10} {:>10} {:>9} {:>9} {:>8} {:>7}",
            "DRS", "cache", "total ms", "p50 ms", "p90 ms", "p99 ms", "MHA meas", "MHA pred", "hits", "AUC"
        )?;
        let on = |b: bool| if b { "on" } else { "off" };
        for r in &self.rows {
            let auc = r.auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
            writeln!(
                f,
                "{:<5} {:<5} {:>10.1} {:>10.3} {:>10.3} {:>10.3} {:>9.4} {:>9.4} {:>8.3} {:>7}",
                on(r.drs),
                on(r.cache),
                r.total_ms,
                r.latency.p50_ms,
                r.latency.p90_ms,
                r.latency.p99_ms,
                r.measured_mha_ratio,
                r.predicted_mha_ratio,
                r.hit_rate,
                auc
            )?;
        }
        Ok(())
    }
}

/// Groups pairs into one request per distinct query, in first-seen order,
/// remembering each candidate's position in `pairs`.
pub(crate) fn requests_by_query(pairs: &[LabeledPair]) -> Vec<(ScoreRequest, Vec<usize>)> {
    let mut out: Vec<(ScoreRequest, Vec<usize>)> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for (i, p) in pairs.iter().enumerate() {
        let k = *slot.entry(p.query.as_str()).or_insert_with(|| {
            out.push((
                ScoreRequest {
                    query: p.query.clone(),
                    candidates: Vec::new(),
                    max_keep: None,
                },
                Vec::new(),
            ));
            out.len() - 1
        });
        out[k].0.candidates.push(p.title.clone());
        out[k].1.push(i);
    }
    out
}

/// Runs the request set derived from `pairs` under every DRS × cache
/// setting of the grid and reports latency, attention cost and AUC.
pub fn bench<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    pairs: &[LabeledPair],
    config: &BenchConfig,
) -> Result<BenchReport> {
    if pairs.is_empty() {
        return Err(Error::Input("bench corpus is empty".into()));
    }
    let requests = requests_by_query(pairs);
    let labels: Option<Vec<u8>> = pairs.iter().map(|p| p.label).collect();
    let mut rows = Vec::new();
    for &drs in &config.drs {
        for &cached in &config.cache {
            let scorer = Scorer::new(model.clone(), tokenizer.clone(), "bench")?
                .with_tau(config.tau)
                .with_batch_size(config.batch_size)
                .with_drs(drs);
            let cache = cached.then(|| ScoreCache::new(CacheConfig::default()));
            let mut latencies: Vec<Duration> = Vec::new();
            let mut scores = vec![0.0; pairs.len()];
            let start = Instant::now();
            for pass in 0..config.passes.max(1) {
                for (req, idx) in &requests {
                    let t = Instant::now();
                    let resp = score_candidates(&scorer, cache.as_ref(), req)?;
                    latencies.push(t.elapsed());
                    if pass == 0 {
                        for (&i, &s) in idx.iter().zip(&resp.scores) {
                            scores[i] = s;
                        }
                    }
                }
            }
            let total_ms = start.elapsed().as_secs_f64() * 1e3;
            let flops = scorer.flops();
            let padded = flops.padded_attention_macs.max(1) as f64;
            rows.push(BenchRow {
                drs,
                cache: cached,
                latency: latency_summary(&latencies),
                total_ms,
                measured_mha_ratio: flops.executed_attention_macs as f64 / padded,
                predicted_mha_ratio: flops.predicted_attention_macs as f64 / padded,
                hit_rate: cache.as_ref().map_or(0.0, |c| c.stats().hit_rate()),
                auc: labels.as_ref().and_then(|l| auc(&scores, l).ok()),
            });
        }
    }
    Ok(BenchReport {
        requests: requests.len(),
        pairs: pairs.len(),
        rows,
    })
}
