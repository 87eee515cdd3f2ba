use std::collections::HashMap;

use super::normalize::{normalize, words};
use super::vocab::Vocabulary;
use super::wordpiece::{piece_count, wordpiece_tokenize};
use crate::error::{Error, Result};

/// Counts normalized words across texts.
pub fn word_frequencies<'a, I>(texts: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut freq = HashMap::new();
    for text in texts {
        for w in words(&normalize(text)) {
            *freq.entry(w.to_string()).or_insert(0) += 1;
        }
    }
    freq
}

/// Words that split into two or more pieces under `base`, most frequent
/// first, ties broken lexicographically.
pub fn extension_candidates(freq: &HashMap<String, u64>, base: &Vocabulary) -> Vec<(String, u64)> {
    let mut cands: Vec<(String, u64)> = freq
        .iter()
        .filter(|(w, _)| piece_count(w, base) >= 2)
        .map(|(w, &c)| (w.clone(), c))
        .collect();
    cands.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    cands
}

/// Adds the `top_k` most frequent multi-piece words of the corpus to `base`
/// as whole tokens.
pub fn build_extended_vocab(freq: &HashMap<String, u64>, base: &Vocabulary, top_k: usize) -> Vocabulary {
    let mut vocab = base.clone();
    vocab.extend(extension_candidates(freq, base).into_iter().take(top_k).map(|(w, _)| w));
    vocab
}

/// Mean sub-token counts over a pair corpus.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubtokenStats {
    pub per_word: f64,
    pub per_title: f64,
    pub per_pair: f64,
}

/// Averages over `(query, title)` pairs. A pair counts the sub-tokens of both
/// texts without specials.
pub fn subtoken_stats<'a, I>(pairs: I, vocab: &Vocabulary) -> Result<SubtokenStats>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let (mut n_pairs, mut n_words, mut word_pieces, mut title_pieces, mut pair_pieces) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for (query, title) in pairs {
        let q = wordpiece_tokenize(query, vocab);
        let t = wordpiece_tokenize(title, vocab);
        n_pairs += 1;
        n_words += q.word_count() + t.word_count();
        word_pieces += q.len() + t.len();
        title_pieces += t.len();
        pair_pieces += q.len() + t.len();
    }
    if n_pairs == 0 {
        return Err(Error::Contract("sub-token statistics need a nonempty corpus".into()));
    }
    let per_word = if n_words == 0 { 0.0 } else { word_pieces as f64 / n_words as f64 };
    Ok(SubtokenStats {
        per_word,
        per_title: title_pieces as f64 / n_pairs as f64,
        per_pair: pair_pieces as f64 / n_pairs as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::SPECIALS;

    fn base() -> Vocabulary {
        Vocabulary::from_tokens(
            SPECIALS
                .iter()
                .copied()
                .chain(["blue", "##tooth", "water", "##proof", "case", "b", "##l", "##u", "##e"]),
        )
        .unwrap()
    }

    #[test]
    fn top_zero_is_identity() {
        let f = word_frequencies(["bluetooth waterproof"]);
        assert_eq!(build_extended_vocab(&f, &base(), 0), base());
    }

    #[test]
    fn single_piece_words_never_added() {
        let f = word_frequencies(["case case case bluetooth"]);
        let v = build_extended_vocab(&f, &base(), 10);
        assert_eq!(v.extension(), &["bluetooth".to_string()]);
    }

    #[test]
    fn most_frequent_first_then_lexicographic() {
        let f = word_frequencies(["bluetooth waterproof bluetooth", "blue waterproof"]);
        assert_eq!(build_extended_vocab(&f, &base(), 1).extension(), &["bluetooth".to_string()]);
        let tie = word_frequencies(["waterproof bluetooth"]);
        assert_eq!(build_extended_vocab(&tie, &base(), 1).extension(), &["bluetooth".to_string()]);
    }

    #[test]
    fn stats_on_tiny_corpus() {
        let s = subtoken_stats([("case", "case")], &base()).unwrap();
        assert_eq!(s.per_word, 1.0);
        assert_eq!(s.per_title, 1.0);
        assert_eq!(s.per_pair, 2.0);
        assert!(subtoken_stats(std::iter::empty(), &base()).is_err());
    }
}
