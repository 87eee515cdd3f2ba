use crate::compute::RngState;
use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::text::TokenizedText;

fn drop_words(text: &TokenizedText, rate: f64, rng: &mut RngState) -> TokenizedText {
    let n = text.words.len();
    let mut tag = vec![0u8; n];
    for (&w, &t) in text.word_index.iter().zip(&text.ner) {
        tag[w] = t;
    }
    let mut keep: Vec<bool> = tag.iter().map(|&t| t != 0 || !rng.bernoulli(rate)).collect();
    if n > 0 && !keep.contains(&true) {
        keep[0] = true;
    }
    let mut new_index = vec![usize::MAX; n];
    let mut out = TokenizedText::default();
    for (w, word) in text.words.iter().enumerate() {
        if keep[w] {
            new_index[w] = out.words.len();
            out.words.push(word.clone());
        }
    }
    for i in 0..text.ids.len() {
        let w = text.word_index[i];
        if keep[w] {
            out.ids.push(text.ids[i]);
            out.pieces.push(text.pieces[i].clone());
            out.word_index.push(new_index[w]);
            out.ner.push(text.ner[i]);
        }
    }
    out
}

/// Drops each untagged word (NER tag 0) of both sides independently with
/// probability `rate`; tagged words always survive. A side that would lose
/// every word keeps its first word.
pub fn word_drop(
    query: &TokenizedText,
    title: &TokenizedText,
    rate: f64,
    rng: &mut RngState,
) -> Result<(TokenizedText, TokenizedText)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param(format!("word-drop rate {rate} outside [0, 1]")));
    }
    if rate == 0.0 {
        return Ok((query.clone(), title.clone()));
    }
    Ok((drop_words(query, rate, rng), drop_words(title, rate, rng)))
}

/// For each row `i`, a row `j ≠ i` whose title differs from `titles[i]`.
/// A draw that hits an identical title is redrawn, at most `titles.len()`
/// draws in total; rows without a usable draw are skipped.
pub fn negative_assignment(titles: &[&str], rng: &mut RngState) -> Vec<(usize, usize)> {
    let n = titles.len();
    if n < 2 {
        tracing::warn!(batch = n, "in-batch negatives need at least two pairs");
        return Vec::new();
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        for _ in 0..n {
            // uniform over the other n-1 rows
            let mut j = rng.below(n - 1);
            if j >= i {
                j += 1;
            }
            if titles[j] != titles[i] {
                out.push((i, j));
                break;
            }
        }
    }
    out
}

/// The clicked pairs followed by one sampled negative per query, built
/// from the other items of the batch.
pub fn in_batch_negatives(batch: &[LabeledPair], rng: &mut RngState) -> Vec<LabeledPair> {
    let titles: Vec<&str> = batch.iter().map(|p| p.title.as_str()).collect();
    let mut out = batch.to_vec();
    for (i, j) in negative_assignment(&titles, rng) {
        out.push(LabeledPair {
            query: batch[i].query.clone(),
            title: batch[j].title.clone(),
            label: Some(0),
            click_level: None,
        });
    }
    out
}
