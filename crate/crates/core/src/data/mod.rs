//! Pair corpora: records, file formats, click-level resampling and the
//! synthetic catalog generator.

mod catalog;
mod generate;
mod io;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize;

pub use catalog::{base_vocab_tokens, Catalog, CategoryLexicon, BUILTIN_CATALOG};
pub use generate::{check_label, generate_corpus, Corpus, GenConfig, NegativeKind};
pub use io::{load_frequencies, load_pairs, save_frequencies, save_pairs, PairFormat};

/// Behavioral depth of a logged pair, shallowest first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickLevel {
    PageClick,
    AddToCart,
    ContactSupplier,
    Order,
    Pay,
}

impl ClickLevel {
    pub const ALL: [ClickLevel; 5] = [
        Self::PageClick,
        Self::AddToCart,
        Self::ContactSupplier,
        Self::Order,
        Self::Pay,
    ];

    /// Copies emitted per pair by [`resample_by_click`].
    pub fn weight(self) -> usize {
        match self {
            Self::PageClick | Self::AddToCart => 1,
            Self::ContactSupplier => 2,
            Self::Order => 3,
            Self::Pay => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::PageClick => "page-click",
            Self::AddToCart => "add-to-cart",
            Self::ContactSupplier => "contact-supplier",
            Self::Order => "order",
            Self::Pay => "pay",
        }
    }
}

impl fmt::Display for ClickLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClickLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown click level {s:?}")))
    }
}

/// One query/title record. `label` is `None` for unlabeled (scoring) data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub query: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_level: Option<ClickLevel>,
}

impl LabeledPair {
    pub fn new(query: impl Into<String>, title: impl Into<String>, label: Option<u8>) -> Result<Self> {
        let pair = Self {
            query: query.into(),
            title: title.into(),
            label,
            click_level: None,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn with_click(mut self, level: ClickLevel) -> Self {
        self.click_level = Some(level);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if normalize(&self.query).is_empty() {
            return Err(Error::Input("query is empty after normalization".into()));
        }
        if normalize(&self.title).is_empty() {
            return Err(Error::Input("title is empty after normalization".into()));
        }
        if let Some(l) = self.label {
            if l > 1 {
                return Err(Error::Input(format!("label {l} is not 0 or 1")));
            }
        }
        Ok(())
    }

    pub fn is_positive(&self) -> bool {
        self.label == Some(1)
    }
}

/// Duplicates each pair by its click-level weight. A pair without a level
/// is an input error.
pub fn resample_by_click(pairs: &[LabeledPair]) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let level = p
            .click_level
            .ok_or_else(|| Error::Input(format!("pair {i} has no click level")))?;
        out.extend(std::iter::repeat_n(p, level.weight()).cloned());
    }
    Ok(out)
}

/// Distinct queries ranked by count, ties lexicographic.
pub fn query_frequency<'a, I>(queries: I) -> Result<Vec<(String, u64)>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for q in queries {
        *counts.entry(q).or_insert(0) += 1;
    }
    if counts.is_empty() {
        return Err(Error::Contract("query frequency needs at least one query".into()));
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().map(|(q, c)| (q.to_string(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(ranked)
}

/// Leading `fraction` of a ranked list, rounded up.
pub fn top_fraction<T>(ranked: &[T], fraction: f64) -> &[T] {
    let n = ((fraction.clamp(0.0, 1.0) * ranked.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    &ranked[..n.min(ranked.len())]
}
