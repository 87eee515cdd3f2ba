//! Normalization, WordPiece tokenization, vocabulary extension and
//! gazetteer NER tagging.

mod extend;
mod lexicon;
mod normalize;
mod vocab;
mod wordpiece;

pub use extend::{build_extended_vocab, extension_candidates, subtoken_stats, word_frequencies, SubtokenStats};
pub use lexicon::{ner_tag, NerCategory, TermLexicon, NER_VOCAB};
pub use normalize::{normalize, words};
pub use vocab::{Vocabulary, BASE_VOCAB, CLS, CONTINUATION, MASK, PAD, PAD_ID, SEP, SPECIALS, UNK};
pub use wordpiece::{piece_count, wordpiece_tokenize, TokenizedText, MAX_WORD_CHARS};

use crate::error::{Error, Result};

/// Vocabulary plus lexicon: tokenizes and tags in one call.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    pub vocab: Vocabulary,
    pub lexicon: TermLexicon,
}

impl Tokenizer {
    pub fn new(vocab: Vocabulary, lexicon: TermLexicon) -> Self {
        Self { vocab, lexicon }
    }

    pub fn encode(&self, text: &str) -> TokenizedText {
        ner_tag(wordpiece_tokenize(text, &self.vocab), &self.lexicon)
    }

    /// JSON record of the vocabulary (with its base boundary) and the
    /// lexicon, stored in checkpoint metadata.
    pub fn to_meta(&self) -> serde_json::Value {
        serde_json::json!({
            "vocab": self.vocab.to_file_string(),
            "vocab_base_len": self.vocab.base_len(),
            "lexicon": self.lexicon.to_tsv(),
        })
    }

    pub fn from_meta(meta: &serde_json::Value) -> Result<Self> {
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k:?}")))
        };
        let text = |k: &str| field(k)?.as_str().ok_or_else(|| Error::Checkpoint(format!("{k:?} is not a string")));
        let base_len = field("vocab_base_len")?
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("\"vocab_base_len\" is not an integer".into()))?;
        let vocab = Vocabulary::parse(text("vocab")?)?.with_base_len(base_len as usize)?;
        let lexicon = TermLexicon::parse(text("lexicon")?, "<checkpoint>")?;
        Ok(Self { vocab, lexicon })
    }
}

#[cfg(test)]
mod props;
