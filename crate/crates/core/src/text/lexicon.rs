use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use super::normalize::normalize;
use super::wordpiece::TokenizedText;
use crate::error::{Error, Result};

/// Entity categories used for NER embeddings. 0 marks untagged words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum NerCategory {
    Material = 1,
    Function = 2,
    Usage = 3,
    Specification = 4,
    Style = 5,
    Core = 6,
}

/// Size of the NER embedding table: untagged plus six categories.
pub const NER_VOCAB: usize = 7;

impl NerCategory {
    pub const ALL: [NerCategory; 6] = [
        Self::Material,
        Self::Function,
        Self::Usage,
        Self::Specification,
        Self::Style,
        Self::Core,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        tag.checked_sub(1).and_then(|i| Self::ALL.get(i as usize).copied())
    }
}

impl fmt::Display for NerCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Material => "material",
            Self::Function => "function",
            Self::Usage => "usage",
            Self::Specification => "specification",
            Self::Style => "style",
            Self::Core => "core",
        };
        f.write_str(name)
    }
}

/// Gazetteer from normalized word to category.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TermLexicon {
    terms: BTreeMap<String, NerCategory>,
}

impl TermLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a word under its normalized form. A word that normalizes to
    /// more than one token is rejected since lookups are per word.
    pub fn insert(&mut self, word: &str, category: NerCategory) -> Result<()> {
        let key = normalize(word);
        if key.is_empty() || key.contains(' ') {
            return Err(Error::Input(format!("lexicon entry {word:?} is not a single word")));
        }
        self.terms.insert(key, category);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<NerCategory> {
        self.terms
            .get(word)
            .or_else(|| self.terms.get(&normalize(word)))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, NerCategory)> {
        self.terms.iter().map(|(w, c)| (w.as_str(), *c))
    }

    /// Parses `word<TAB>category` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(contents: &str, path: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (i, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message,
            };
            let (word, cat) = line
                .split_once('\t')
                .ok_or_else(|| err("expected word<TAB>category".into()))?;
            let tag: u8 = cat
                .trim()
                .parse()
                .map_err(|_| err(format!("category {cat:?} is not an integer")))?;
            let category = NerCategory::from_tag(tag).ok_or_else(|| err(format!("category {tag} outside 1..=6")))?;
            lex.insert(word, category).map_err(|e| err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_tsv(&self) -> String {
        self.iter().map(|(w, c)| format!("{w}\t{}\n", c.tag())).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

impl FromIterator<(String, NerCategory)> for TermLexicon {
    fn from_iter<I: IntoIterator<Item = (String, NerCategory)>>(iter: I) -> Self {
        Self {
            terms: iter.into_iter().map(|(w, c)| (normalize(&w), c)).collect(),
        }
    }
}

/// Tags every sub-token with its source word's category; unknown words and
/// `[UNK]` pieces of unknown words get 0.
pub fn ner_tag(mut tokens: TokenizedText, lexicon: &TermLexicon) -> TokenizedText {
    let word_tags: Vec<u8> = tokens
        .words
        .iter()
        .map(|w| lexicon.get(w).map_or(0, NerCategory::tag))
        .collect();
    tokens.ner = tokens.word_index.iter().map(|&w| word_tags[w]).collect();
    tokens
}
