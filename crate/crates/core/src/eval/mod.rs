//! Offline metrics: ROC-AUC, micro/macro F1, Spearman and Pearson, and a
//! report over a scored dataset.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::batching::{encode_text_pair, sequential_batches, trim_batch, PairBatch, Specials};
use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::text::Tokenizer;

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    Ok(())
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Rank-sum (Mann-Whitney) AUC; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1 {
    pub micro: f64,
    pub macro_: f64,
}

fn f1_score(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Predicts positive when `score >= threshold`. Micro-F1 pools both classes'
/// counts; macro-F1 averages the per-class F1 values.
pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<F1> {
    check_lengths(scores, labels)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::param(format!("threshold {threshold} outside (0, 1)")));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let pos = f1_score(tp, fp, fn_);
    let neg = f1_score(tn, fn_, fp);
    // class-pooled counts: every error is one FP and one FN
    let micro = f1_score(tp + tn, fp + fn_, fn_ + fp);
    Ok(F1 {
        micro,
        macro_: (pos + neg) / 2.0,
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric("correlation needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation with zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!("{} vs {} values", x.len(), y.len())));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

fn labels_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| f64::from(l)).collect()
}

/// Threshold among the observed scores that maximizes micro-F1; ties go to
/// the value closest to 0.5.
pub fn best_threshold(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let mut candidates: Vec<f64> = scores.iter().copied().filter(|&s| s > 0.0 && s < 1.0).collect();
    candidates.push(0.5);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
    for t in candidates {
        let m = f1(scores, labels, t)?.micro;
        if m > best.0 || (m == best.0 && (t - 0.5).abs() < (best.1 - 0.5).abs()) {
            best = (m, t);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub f1_micro: f64,
    pub f1_macro: f64,
    pub spearman: f64,
    pub pearson: f64,
    pub threshold: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let f = f1(scores, labels, threshold)?;
        let y = labels_f64(labels);
        Ok(Self {
            auc: auc(scores, labels)?,
            f1_micro: f.micro,
            f1_macro: f.macro_,
            spearman: spearman(scores, &y)?,
            pearson: pearson(scores, &y)?,
            threshold,
            n: scores.len(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

impl fmt::Display for MetricReport {
    /// Aligned columns: `AUC  F1-micro  F1-macro  Spearman  Pearson`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>7}", "AUC", "F1-micro", "F1-macro", "Spearman", "Pearson", "thresh", "n")?;
        write!(
            f,
            "{:>8.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.3} {:>7}",
            self.auc, self.f1_micro, self.f1_macro, self.spearman, self.pearson, self.threshold, self.n
        )
    }
}

/// Scores pairs in consecutive batches of `batch_size`, trimming each batch
/// when `trim` is set. Eval mode; deterministic.
pub fn score_pairs<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    pairs: &[LabeledPair],
    tau: f64,
    batch_size: usize,
    trim: bool,
) -> Result<Vec<f64>> {
    let cfg = &model.config;
    let encoded = pairs
        .iter()
        .map(|p| encode_text_pair(tokenizer, &p.query, &p.title, cfg))
        .collect::<Result<Vec<_>>>()?;
    let specials = Specials::of(tokenizer);
    let mut scores = Vec::with_capacity(pairs.len());
    for idx in sequential_batches(pairs.len(), batch_size) {
        let chunk: Vec<_> = idx.iter().map(|&i| encoded[i].clone()).collect();
        let labels: Vec<Option<u8>> = idx.iter().map(|&i| pairs[i].label).collect();
        let batch = PairBatch::new(&chunk, &labels, cfg.query_len, cfg.item_len, specials)?;
        let enc = if trim { trim_batch(&batch).encoding() } else { batch.encoding() };
        let s = model.scores(&enc, T::from_f64_lossy(tau))?;
        scores.extend(s.into_iter().map(Scalar::to_f64_lossy));
    }
    Ok(scores)
}

/// Scores a labeled dataset and assembles the report.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    tokenizer: &Tokenizer,
    pairs: &[LabeledPair],
    tau: f64,
    threshold: f64,
) -> Result<MetricReport> {
    if pairs.is_empty() {
        return Err(Error::Input("evaluation needs a nonempty dataset".into()));
    }
    let labels = pairs
        .iter()
        .map(|p| p.label.ok_or_else(|| Error::Input("evaluation needs labeled pairs".into())))
        .collect::<Result<Vec<u8>>>()?;
    let scores = score_pairs(model, tokenizer, pairs, tau, 64, true)?;
    MetricReport::compute(&scores, &labels, threshold).map_err(|e| match e {
        Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("evaluating {} pairs: {m}", pairs.len())),
        other => other,
    })
}
