use super::normalize::{normalize, words};
use super::vocab::{Vocabulary, CONTINUATION, UNK};

/// Words longer than this many characters are mapped straight to `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

/// Sub-token sequence of one text. `word_index[i]` is the source word of
/// sub-token `i`; sub-tokens of a word are contiguous and share `ner[i]`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    pub pieces: Vec<String>,
    pub word_index: Vec<usize>,
    pub ner: Vec<u8>,
    /// Normalized source words.
    pub words: Vec<String>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn has_unk(&self) -> bool {
        self.pieces.iter().any(|p| p == UNK)
    }

    /// Strips continuation markers and rejoins words with single spaces.
    pub fn detokenize(&self) -> String {
        let mut out = String::new();
        for (i, piece) in self.pieces.iter().enumerate() {
            match piece.strip_prefix(CONTINUATION) {
                Some(rest) if i > 0 && self.word_index[i - 1] == self.word_index[i] => out.push_str(rest),
                _ => {
                    if i > 0 {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
        out
    }
}

/// Greedy longest-prefix WordPiece over the normalized text. A word present
/// in the vocabulary as a whole stays one token; otherwise only base
/// pieces are used.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocabulary) -> TokenizedText {
    let normalized = normalize(text);
    let mut out = TokenizedText::default();
    for (w, word) in words(&normalized).enumerate() {
        let start = out.ids.len();
        match split_word(word, vocab) {
            Some(pieces) => {
                for (id, piece) in pieces {
                    out.ids.push(id);
                    out.pieces.push(piece);
                }
            }
            None => {
                out.ids.push(vocab.unk_id());
                out.pieces.push(UNK.to_string());
            }
        }
        out.word_index.extend(std::iter::repeat_n(w, out.ids.len() - start));
        out.words.push(word.to_string());
    }
    out.ner = vec![0; out.ids.len()];
    out
}

/// Number of sub-tokens a single normalized word splits into; unmatchable
/// words count as one `[UNK]`.
pub fn piece_count(word: &str, vocab: &Vocabulary) -> usize {
    split_word(word, vocab).map_or(1, |p| p.len())
}

fn split_word(word: &str, vocab: &Vocabulary) -> Option<Vec<(u32, String)>> {
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
        return None;
    }
    // extension tokens only ever match a complete word, so extending never
    // changes how any other word splits
    if let Some(id) = vocab.id(word).filter(|_| !word.starts_with(CONTINUATION)) {
        return Some(vec![(id, word.to_string())]);
    }
    let base_len = vocab.base_len() as u32;
    // byte offset of each char boundary
    let mut bounds: Vec<usize> = word.char_indices().map(|(b, _)| b).collect();
    bounds.push(word.len());
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut candidate = String::with_capacity(word.len() + CONTINUATION.len());
    while start < chars.len() {
        let mut end = chars.len();
        let mut found = None;
        while end > start {
            candidate.clear();
            if start > 0 {
                candidate.push_str(CONTINUATION);
            }
            candidate.push_str(&word[bounds[start]..bounds[end]]);
            if let Some(id) = vocab.id(&candidate).filter(|&id| id < base_len) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        let id = found?;
        pieces.push((id, candidate.clone()));
        start = end;
    }
    Some(pieces)
}
