use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, CategoryLexicon, Role};
use super::LabeledPair;
use crate::compute::RngState;
use crate::error::{Error, Result};
use crate::text::{normalize, piece_count, word_frequencies, words, TermLexicon, Vocabulary};

/// Synthetic corpus settings. Defaults give a balanced, noise-free corpus
/// over the shipped catalog.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub catalog: Catalog,
    /// Number of leading catalog categories used.
    pub n_categories: usize,
    pub n_pairs: usize,
    pub positive_fraction: f64,
    /// Mean count of off-category keywords stuffed into each title.
    pub stuffing_rate: f64,
    /// Probability that a query names a unit of measure.
    pub unit_rate: f64,
    /// Sub-token budgets under the base vocabulary; stuffing and filler
    /// words are dropped until a text fits.
    pub max_query_pieces: usize,
    pub max_title_pieces: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            catalog: Catalog::builtin(),
            n_categories: 6,
            n_pairs: 1000,
            positive_fraction: 0.5,
            stuffing_rate: 1.5,
            unit_rate: 0.3,
            max_query_pieces: 16,
            max_title_pieces: 36,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        if self.n_categories == 0 || self.n_categories > self.catalog.categories.len() {
            return Err(Error::Config(format!(
                "n_categories {} outside 1..={}",
                self.n_categories,
                self.catalog.categories.len()
            )));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!("positive_fraction {} outside (0, 1)", self.positive_fraction)));
        }
        if !(self.stuffing_rate >= 0.0 && self.stuffing_rate.is_finite()) {
            return Err(Error::Config(format!("stuffing_rate {} must be finite and nonnegative", self.stuffing_rate)));
        }
        if !(0.0..=1.0).contains(&self.unit_rate) {
            return Err(Error::Config(format!("unit_rate {} outside [0, 1]", self.unit_rate)));
        }
        if self.max_query_pieces < 8 || self.max_title_pieces < 12 {
            return Err(Error::Config("piece budgets too small for the catalog".into()));
        }
        Ok(())
    }
}

/// The single rule criterion a negative pair violates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeKind {
    Subject,
    Keyword,
    Unit,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub pairs: Vec<LabeledPair>,
    /// `None` for positives.
    pub negative_kinds: Vec<Option<NegativeKind>>,
    pub lexicon: TermLexicon,
    /// Word counts over all queries and titles.
    pub frequencies: HashMap<String, u64>,
}

/// Emits `n_pairs` labeled pairs, exactly `round(positive_fraction * n)` of
/// them positive. Fully determined by the config.
pub fn generate_corpus(config: &GenConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = RngState::new(config.seed);
    let base = Vocabulary::base();
    let n_pos = (config.positive_fraction * config.n_pairs as f64).round() as usize;
    let mut positive: Vec<bool> = (0..config.n_pairs).map(|i| i < n_pos).collect();
    positive.shuffle(&mut rng);
    let cats = &config.catalog.categories[..config.n_categories];
    let stuffing = Poisson::new(config.stuffing_rate.max(1e-12)).map_err(|e| Error::Config(e.to_string()))?;

    let mut pairs = Vec::with_capacity(config.n_pairs);
    let mut kinds = Vec::with_capacity(config.n_pairs);
    for &pos in &positive {
        let kind = if pos {
            None
        } else {
            Some([NegativeKind::Subject, NegativeKind::Keyword, NegativeKind::Unit][rng.below(3)])
        };
        let ci = rng.below(cats.len());
        let (query, title) = make_pair(config, cats, ci, kind, &stuffing, &base, &mut rng);
        pairs.push(LabeledPair::new(query, title, Some(u8::from(pos)))?);
        kinds.push(kind);
    }
    let frequencies = word_frequencies(pairs.iter().flat_map(|p| [p.query.as_str(), p.title.as_str()]));
    Ok(Corpus {
        pairs,
        negative_kinds: kinds,
        lexicon: config.catalog.lexicon(),
        frequencies,
    })
}

fn pick<'a>(list: &'a [String], rng: &mut RngState) -> &'a str {
    list.choose(rng).expect("validated nonempty")
}

fn pick_other<'a>(list: &'a [String], not: &[&str], rng: &mut RngState) -> Option<&'a str> {
    let rest: Vec<&String> = list.iter().filter(|w| !not.contains(&w.as_str())).collect();
    rest.choose(rng).map(|w| w.as_str())
}

fn pieces(text: &[&str], base: &Vocabulary) -> usize {
    text.iter().map(|w| piece_count(w, base)).sum()
}

fn make_pair(
    config: &GenConfig,
    cats: &[CategoryLexicon],
    ci: usize,
    kind: Option<NegativeKind>,
    stuffing: &Poisson<f64>,
    base: &Vocabulary,
    rng: &mut RngState,
) -> (String, String) {
    let cat = &cats[ci];
    let attrs: Vec<String> = cat.all_attributes().cloned().collect();

    let subject = pick(&cat.subjects, rng);
    let mut cores = vec![pick(&cat.core, rng)];
    if rng.bernoulli(0.3) {
        if let Some(c) = pick_other(&cat.core, &cores, rng) {
            cores.push(c);
        }
    }
    let query_attr = rng.bernoulli(0.5).then(|| pick(&attrs, rng));
    let unit = (kind == Some(NegativeKind::Unit) || rng.bernoulli(config.unit_rate)).then(|| pick(&cat.units, rng));

    let mut query: Vec<&str> = Vec::new();
    query.extend(query_attr);
    query.push(subject);
    query.extend(&cores);
    query.extend(unit);

    let title_subject = match kind {
        Some(NegativeKind::Subject) => pick_other(&cat.subjects, &[subject], rng).expect("two subjects"),
        _ => subject,
    };
    let mut title_cores: Vec<&str> = match kind {
        Some(NegativeKind::Keyword) => {
            // drop a nonempty subset of the query's core words
            let keep = rng.below(cores.len());
            let mut kept = cores.clone();
            kept.shuffle(rng);
            kept.truncate(keep);
            kept
        }
        _ => cores.clone(),
    };
    if kind == Some(NegativeKind::Keyword) || rng.bernoulli(0.5) {
        if let Some(extra) = pick_other(&cat.core, &cores, rng) {
            title_cores.push(extra);
        }
    }
    let title_unit = match (kind, unit) {
        (Some(NegativeKind::Unit), Some(u)) => pick_other(&cat.units, &[u], rng).expect("two units"),
        (_, Some(u)) => u,
        (_, None) => pick(&cat.units, rng),
    };
    let n_attr = 1 + rng.below(3);
    let mut title_attrs: Vec<&str> = Vec::new();
    if let Some(a) = query_attr.filter(|_| rng.bernoulli(0.5)) {
        title_attrs.push(a);
    }
    while title_attrs.len() < n_attr {
        if let Some(a) = pick_other(&attrs, &title_attrs, rng) {
            title_attrs.push(a);
        }
    }
    let n_fill = rng.below(3);
    let fillers: Vec<&str> = (0..n_fill).map(|_| pick(&config.catalog.fillers, rng)).collect();
    let n_stuff = (stuffing.sample(rng) as usize).min(4);
    let mut stuffed: Vec<&str> = Vec::new();
    if cats.len() > 1 {
        for _ in 0..n_stuff {
            let mut oi = rng.below(cats.len() - 1);
            if oi >= ci {
                oi += 1;
            }
            let other = &cats[oi];
            let w = if rng.bernoulli(0.5) {
                pick(&other.core, rng)
            } else {
                let a: Vec<&String> = other.all_attributes().collect();
                a.choose(rng).expect("validated nonempty").as_str()
            };
            stuffed.push(w);
        }
    }

    let mut title: Vec<&str> = Vec::new();
    title.push(title_subject);
    title.extend(&title_cores);
    title.extend(&title_attrs);
    title.push(title_unit);
    let mut optional: Vec<&str> = fillers.iter().chain(&stuffed).copied().collect();
    while pieces(&title, base) + pieces(&optional, base) > config.max_title_pieces && !optional.is_empty() {
        optional.pop();
    }
    while pieces(&title, base) > config.max_title_pieces && title.len() > 2 + title_cores.len() {
        // shed attributes last
        title.remove(1 + title_cores.len());
    }
    title.extend(optional);
    title.shuffle(rng);
    if pieces(&query, base) > config.max_query_pieces {
        query.retain(|w| Some(*w) != query_attr);
    }
    (query.join(" "), title.join(" "))
}

/// Re-derives a label from surface text: the query's subject appears in the
/// title, every query core word appears in the title, and a query unit, if
/// any, appears in the title.
pub fn check_label(query: &str, title: &str, catalog: &Catalog) -> u8 {
    let roles = catalog.roles();
    let nq = normalize(query);
    let nt = normalize(title);
    let title_words: HashSet<&str> = words(&nt).collect();
    let mut has_subject = false;
    for w in words(&nq) {
        match roles.get(w) {
            Some(Role::Subject) => has_subject = true,
            Some(Role::Core | Role::Unit) => {}
            None => continue,
        }
        if !title_words.contains(w) {
            return 0;
        }
    }
    u8::from(has_subject)
}
