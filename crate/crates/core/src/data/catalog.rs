use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{NerCategory, TermLexicon, SPECIALS};

/// Shipped product catalog: `category<TAB>role<TAB>words`, where `|` marks
/// the piece boundaries of a fused term.
pub const BUILTIN_CATALOG: &str = include_str!("../../assets/catalog.tsv");

const ATTRIBUTE_ROLES: [&str; 5] = ["material", "function", "usage", "specification", "style"];

const CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789%-/+&#.,!?()[]:;'\"*$@_=~<>";
const COMMON_WORDS: [&str; 32] = [
    "the", "and", "for", "with", "of", "in", "on", "to", "a", "men", "women", "kids", "set", "pack", "piece", "pcs",
    "style", "color", "size", "mm", "cm", "kg", "ml", "inch", "super", "ultra", "power", "smart", "home", "sport",
    "water", "speed",
];
const COMMON_SUFFIXES: [&str; 15] = [
    "##s", "##es", "##ed", "##ing", "##er", "##ers", "##ly", "##able", "##ness", "##tion", "##al", "##ic", "##ful",
    "##less", "##y",
];

/// Word lists of one product category. `attributes[c - 1]` holds NER class
/// `c` for `c` in 1..=5; units are specification-class words.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    pub name: String,
    pub subjects: Vec<String>,
    pub attributes: [Vec<String>; 5],
    pub core: Vec<String>,
    pub units: Vec<String>,
}

impl CategoryLexicon {
    fn empty(name: &str) -> Self {
        Self {
            name: name.to_string(),
            subjects: Vec::new(),
            attributes: Default::default(),
            core: Vec::new(),
            units: Vec::new(),
        }
    }

    pub fn all_attributes(&self) -> impl Iterator<Item = &String> {
        self.attributes.iter().flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub categories: Vec<CategoryLexicon>,
    /// Untagged promotional words shared by all categories.
    pub fillers: Vec<String>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CATALOG).expect("shipped catalog parses")
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let mut categories: Vec<CategoryLexicon> = Vec::new();
        let mut fillers = Vec::new();
        for (i, line) in contents.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: "catalog".into(),
                line: i + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [cat, role, words] = cols[..] else {
                return Err(err("expected category<TAB>role<TAB>words".into()));
            };
            let words: Vec<String> = words.split_whitespace().map(|w| w.replace('|', "")).collect();
            if role == "filler" {
                fillers.extend(words);
                continue;
            }
            let idx = match categories.iter().position(|c| c.name == cat) {
                Some(idx) => idx,
                None => {
                    categories.push(CategoryLexicon::empty(cat));
                    categories.len() - 1
                }
            };
            let entry = &mut categories[idx];
            match role {
                "subject" => entry.subjects.extend(words),
                "core" => entry.core.extend(words),
                "unit" => entry.units.extend(words),
                _ => {
                    let class = ATTRIBUTE_ROLES
                        .iter()
                        .position(|r| *r == role)
                        .ok_or_else(|| err(format!("unknown role {role:?}")))?;
                    entry.attributes[class].extend(words);
                }
            }
        }
        let catalog = Self { categories, fillers };
        catalog.validate()?;
        Ok(catalog)
    }

    /// Every category needs two or more subjects, core words and units so
    /// each kind of negative can be built; no word may appear twice.
    pub fn validate(&self) -> Result<()> {
        if self.categories.is_empty() {
            return Err(Error::Config("catalog has no categories".into()));
        }
        for c in &self.categories {
            for (what, list) in [("subjects", &c.subjects), ("core words", &c.core), ("units", &c.units)] {
                if list.len() < 2 {
                    return Err(Error::Config(format!("category {} needs at least two {what}", c.name)));
                }
            }
        }
        let mut seen = BTreeSet::new();
        for (word, _) in self.tagged_words() {
            if !seen.insert(word) {
                return Err(Error::Config(format!("word {word:?} appears in more than one list")));
            }
        }
        Ok(())
    }

    /// Every catalog word with its NER tag (fillers are 0).
    pub fn tagged_words(&self) -> impl Iterator<Item = (&str, u8)> {
        let per_cat = self.categories.iter().flat_map(|c| {
            let attrs = c
                .attributes
                .iter()
                .enumerate()
                .flat_map(|(i, list)| list.iter().map(move |w| (w.as_str(), i as u8 + 1)));
            c.subjects
                .iter()
                .chain(&c.core)
                .map(|w| (w.as_str(), NerCategory::Core.tag()))
                .chain(attrs)
                .chain(c.units.iter().map(|w| (w.as_str(), NerCategory::Specification.tag())))
        });
        per_cat.chain(self.fillers.iter().map(|w| (w.as_str(), 0)))
    }

    /// Gazetteer of all tagged words. Subjects count as core terms.
    pub fn lexicon(&self) -> TermLexicon {
        self.tagged_words()
            .filter_map(|(w, t)| NerCategory::from_tag(t).map(|c| (w.to_string(), c)))
            .collect()
    }

    /// Role lookup used by the rule checker.
    pub(crate) fn roles(&self) -> HashMap<&str, Role> {
        let mut roles = HashMap::new();
        for c in &self.categories {
            roles.extend(c.subjects.iter().map(|w| (w.as_str(), Role::Subject)));
            roles.extend(c.core.iter().map(|w| (w.as_str(), Role::Core)));
            roles.extend(c.units.iter().map(|w| (w.as_str(), Role::Unit)));
        }
        roles
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Role {
    Subject,
    Core,
    Unit,
}

/// Base vocabulary derived from a raw catalog: specials, single characters
/// with their continuations, common words, every plain catalog word, the
/// pieces of fused terms and common suffixes. Fused terms themselves are
/// left out so they split into two or more pieces.
pub fn base_vocab_tokens(raw_catalog: &str) -> Vec<String> {
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(CHARS.chars().map(String::from));
    tokens.extend(CHARS.chars().map(|c| format!("##{c}")));
    let mut heads: BTreeSet<String> = COMMON_WORDS.iter().map(|s| s.to_string()).collect();
    let mut tails: BTreeSet<String> = COMMON_SUFFIXES.iter().map(|s| s.to_string()).collect();
    for line in raw_catalog.lines().filter(|l| !l.starts_with('#')) {
        let Some(words) = line.split('\t').nth(2) else { continue };
        for w in words.split_whitespace() {
            let mut pieces = w.split('|');
            heads.extend(pieces.next().map(String::from));
            tails.extend(pieces.map(|p| format!("##{p}")));
        }
    }
    let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
    for t in heads.into_iter().chain(tails) {
        if seen.insert(t.clone()) {
            tokens.push(t);
        }
    }
    tokens
}
