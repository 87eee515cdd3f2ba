//! Padded pair batches and the dynamic-length scheme: per-batch removal of
//! columns that are padding in every row, separately for the query and the
//! item block.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::compute::RngState;
use crate::error::{Error, Result};
use crate::model::{complexity_estimate, Complexity, InputEncoding, ModelConfig};
use crate::text::{TokenizedText, Tokenizer, PAD_ID};

/// Special-token ids used to frame a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub cls: u32,
    pub sep: u32,
}

impl Specials {
    pub fn of(tokenizer: &Tokenizer) -> Self {
        Self {
            cls: tokenizer.vocab.cls_id(),
            sep: tokenizer.vocab.sep_id(),
        }
    }
}

/// One pair truncated to the budgets; pads are not stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub query_tokens: Vec<u32>,
    pub query_ner: Vec<u32>,
    pub item_tokens: Vec<u32>,
    pub item_ner: Vec<u32>,
}

/// Truncates the query to `query_len` and the item to `item_len` sub-tokens.
pub fn encode_pair(query: &TokenizedText, item: &TokenizedText, query_len: usize, item_len: usize) -> Result<EncodedPair> {
    if query.is_empty() {
        return Err(Error::Input("query has no tokens".into()));
    }
    if item.is_empty() {
        return Err(Error::Input("item has no tokens".into()));
    }
    let take = |t: &TokenizedText, n: usize| -> (Vec<u32>, Vec<u32>) {
        let k = t.len().min(n);
        (t.ids[..k].to_vec(), t.ner[..k].iter().map(|&x| u32::from(x)).collect())
    };
    let (query_tokens, query_ner) = take(query, query_len);
    let (item_tokens, item_ner) = take(item, item_len);
    Ok(EncodedPair {
        query_tokens,
        query_ner,
        item_tokens,
        item_ner,
    })
}

/// Tokenizes, tags and truncates a raw pair.
pub fn encode_text_pair(tokenizer: &Tokenizer, query: &str, title: &str, config: &ModelConfig) -> Result<EncodedPair> {
    encode_pair(&tokenizer.encode(query), &tokenizer.encode(title), config.query_len, config.item_len)
}

/// Pairs laid out as a query block of width `query_len` and an item block of
/// width `item_len`, padded at the tail of each block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairBatch {
    pub n: usize,
    pub query_len: usize,
    pub item_len: usize,
    pub specials: Specials,
    /// `[n × query_len]`.
    pub query_tokens: Vec<u32>,
    pub query_ner: Vec<u32>,
    /// `[n × item_len]`.
    pub item_tokens: Vec<u32>,
    pub item_ner: Vec<u32>,
    pub labels: Vec<Option<u8>>,
}

impl PairBatch {
    pub fn new(pairs: &[EncodedPair], labels: &[Option<u8>], query_len: usize, item_len: usize, specials: Specials) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Contract("a batch needs at least one pair".into()));
        }
        if labels.len() != pairs.len() {
            return Err(Error::dim(format!("{} pairs, {} labels", pairs.len(), labels.len())));
        }
        let mut b = Self {
            n: pairs.len(),
            query_len,
            item_len,
            specials,
            query_tokens: Vec::with_capacity(pairs.len() * query_len),
            query_ner: Vec::with_capacity(pairs.len() * query_len),
            item_tokens: Vec::with_capacity(pairs.len() * item_len),
            item_ner: Vec::with_capacity(pairs.len() * item_len),
            labels: labels.to_vec(),
        };
        for p in pairs {
            if p.query_tokens.len() > query_len || p.item_tokens.len() > item_len {
                return Err(Error::Input("pair exceeds the batch layout; encode it with these budgets".into()));
            }
            if p.query_tokens.is_empty() || p.item_tokens.is_empty() {
                return Err(Error::Input("pair has an empty side".into()));
            }
            if p.query_tokens.contains(&PAD_ID) || p.item_tokens.contains(&PAD_ID) {
                return Err(Error::Input("[PAD] inside a pair".into()));
            }
            pad_into(&mut b.query_tokens, &p.query_tokens, query_len);
            pad_into(&mut b.query_ner, &p.query_ner, query_len);
            pad_into(&mut b.item_tokens, &p.item_tokens, item_len);
            pad_into(&mut b.item_ner, &p.item_ner, item_len);
        }
        Ok(b)
    }

    /// Sequence width including [CLS] and both [SEP].
    pub fn seq_len(&self) -> usize {
        self.query_len + self.item_len + 3
    }

    pub fn query_row(&self, r: usize) -> &[u32] {
        &self.query_tokens[r * self.query_len..][..self.query_len]
    }

    pub fn item_row(&self, r: usize) -> &[u32] {
        &self.item_tokens[r * self.item_len..][..self.item_len]
    }

    /// Non-pad length of the query side of row `r`.
    pub fn query_nonzero(&self, r: usize) -> usize {
        nonzero(self.query_row(r))
    }

    pub fn item_nonzero(&self, r: usize) -> usize {
        nonzero(self.item_row(r))
    }

    pub fn label_indices(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| l.map(usize::from).ok_or_else(|| Error::Input("unlabeled pair in a training batch".into())))
            .collect()
    }

    /// `[CLS] query [SEP] item [SEP]` id grids with compact positions.
    pub fn encoding(&self) -> InputEncoding {
        let l = self.seq_len();
        let cap = self.n * l;
        let mut enc = InputEncoding {
            batch: self.n,
            seq: l,
            tokens: Vec::with_capacity(cap),
            segments: Vec::with_capacity(cap),
            positions: Vec::with_capacity(cap),
            ner: Vec::with_capacity(cap),
            mask: Vec::with_capacity(cap),
        };
        for r in 0..self.n {
            let mut pos = 0u32;
            let mut push = |tok: u32, seg: u32, ner: u32| {
                let real = tok != PAD_ID;
                enc.tokens.push(tok);
                enc.segments.push(seg);
                enc.ner.push(if real { ner } else { 0 });
                enc.mask.push(real);
                enc.positions.push(if real { pos } else { 0 });
                pos += u32::from(real);
            };
            push(self.specials.cls, 0, 0);
            let qn = &self.query_ner[r * self.query_len..][..self.query_len];
            for (&t, &g) in self.query_row(r).iter().zip(qn) {
                push(t, 0, g);
            }
            push(self.specials.sep, 0, 0);
            let inr = &self.item_ner[r * self.item_len..][..self.item_len];
            for (&t, &g) in self.item_row(r).iter().zip(inr) {
                push(t, 1, g);
            }
            push(self.specials.sep, 1, 0);
        }
        enc
    }

    /// Rows `rows` as a new batch with the same layout.
    pub fn select(&self, rows: &[usize]) -> Self {
        let q = |v: &[u32]| rows.iter().flat_map(|&r| v[r * self.query_len..][..self.query_len].iter().copied()).collect();
        let i = |v: &[u32]| rows.iter().flat_map(|&r| v[r * self.item_len..][..self.item_len].iter().copied()).collect();
        Self {
            n: rows.len(),
            query_len: self.query_len,
            item_len: self.item_len,
            specials: self.specials,
            query_tokens: q(&self.query_tokens),
            query_ner: q(&self.query_ner),
            item_tokens: i(&self.item_tokens),
            item_ner: i(&self.item_ner),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

fn pad_into(out: &mut Vec<u32>, src: &[u32], width: usize) {
    out.extend_from_slice(src);
    out.extend(std::iter::repeat_n(0, width - src.len()));
}

fn nonzero(row: &[u32]) -> usize {
    row.iter().take_while(|&&t| t != PAD_ID).count()
}

/// A batch re-laid-out at its own maximum query and item lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrimmedBatch {
    pub batch: PairBatch,
    /// Width of the padded layout the batch came from.
    pub full_len: usize,
    /// `column_map[j]` is the padded-layout column of trimmed column `j`.
    pub column_map: Vec<usize>,
}

impl TrimmedBatch {
    pub fn seq_len(&self) -> usize {
        self.batch.seq_len()
    }

    pub fn encoding(&self) -> InputEncoding {
        self.batch.encoding()
    }
}

/// Drops the query and item columns that are [PAD] in every row. Specials
/// are kept; `l′ = l_q′ + l_i′ + 3`.
pub fn trim_batch(batch: &PairBatch) -> TrimmedBatch {
    let lq = (0..batch.n).map(|r| batch.query_nonzero(r)).max().unwrap_or(0);
    let li = (0..batch.n).map(|r| batch.item_nonzero(r)).max().unwrap_or(0);
    let cut = |v: &[u32], width: usize, keep: usize| -> Vec<u32> {
        v.chunks(width).flat_map(|row| row[..keep].iter().copied()).collect()
    };
    let trimmed = PairBatch {
        n: batch.n,
        query_len: lq,
        item_len: li,
        specials: batch.specials,
        query_tokens: cut(&batch.query_tokens, batch.query_len, lq),
        query_ner: cut(&batch.query_ner, batch.query_len, lq),
        item_tokens: cut(&batch.item_tokens, batch.item_len, li),
        item_ner: cut(&batch.item_ner, batch.item_len, li),
        labels: batch.labels.clone(),
    };
    let mut column_map = vec![0];
    column_map.extend(1..=lq);
    column_map.push(batch.query_len + 1);
    column_map.extend((0..li).map(|t| batch.query_len + 2 + t));
    column_map.push(batch.query_len + batch.item_len + 2);
    TrimmedBatch {
        batch: trimmed,
        full_len: batch.seq_len(),
        column_map,
    }
}

/// Attention cost of width `l′` relative to width `l`: `(l′/l)²`.
pub fn cost_ratio(l_prime: usize, l: usize) -> Result<f64> {
    if l_prime == 0 || l_prime > l {
        return Err(Error::Contract(format!("cost ratio needs 0 < l' <= l, got l'={l_prime}, l={l}")));
    }
    let r = l_prime as f64 / l as f64;
    Ok(r * r)
}

/// Estimated cost of a batch in its padded and trimmed layouts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchFlops {
    pub padded_len: usize,
    pub trimmed_len: usize,
    pub padded: Complexity,
    pub trimmed: Complexity,
    /// `cost_ratio(trimmed_len, padded_len)`.
    pub mha_ratio: f64,
    /// Ratio of total estimated FLOPs.
    pub total_ratio: f64,
}

pub fn measure_batch_flops(batch: &PairBatch, config: &ModelConfig) -> Result<BatchFlops> {
    let trimmed = trim_batch(batch);
    let (l, lp) = (batch.seq_len(), trimmed.seq_len());
    let padded = complexity_estimate(config, batch.n, l);
    let small = complexity_estimate(config, batch.n, lp);
    Ok(BatchFlops {
        padded_len: l,
        trimmed_len: lp,
        padded,
        trimmed: small,
        mha_ratio: cost_ratio(lp, l)?,
        total_ratio: small.total() as f64 / padded.total() as f64,
    })
}

/// Groups indices into batches of similar length: a random order, stably
/// sorted by length, cut into chunks, with the chunk order shuffled.
pub fn bucket_by_length(lengths: &[usize], batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Consecutive chunks in input order.
pub fn sequential_batches(len: usize, batch_size: usize) -> Vec<Vec<usize>> {
    (0..len)
        .collect::<Vec<_>>()
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests;
