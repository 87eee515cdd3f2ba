use proptest::prelude::*;

use super::*;
use crate::model::Model;
use crate::text::{TermLexicon, Vocabulary};

const SPECIALS: Specials = Specials { cls: 2, sep: 3 };

fn pair(q: usize, i: usize, base: u32) -> EncodedPair {
    EncodedPair {
        query_tokens: (0..q as u32).map(|x| 5 + (base + x) % 20).collect(),
        query_ner: (0..q as u32).map(|x| x % 7).collect(),
        item_tokens: (0..i as u32).map(|x| 5 + (base * 3 + x) % 20).collect(),
        item_ner: (0..i as u32).map(|x| (x + 1) % 7).collect(),
    }
}

fn batch(lens: &[(usize, usize)], lq: usize, li: usize) -> PairBatch {
    let pairs: Vec<EncodedPair> = lens.iter().enumerate().map(|(k, &(q, i))| pair(q, i, k as u32)).collect();
    PairBatch::new(&pairs, &vec![Some(1); pairs.len()], lq, li, SPECIALS).unwrap()
}

#[test]
fn encode_pair_truncates_and_pads() {
    let v = Vocabulary::base();
    let tok = Tokenizer::new(v, TermLexicon::new());
    let q = tok.encode("a b c d");
    let t = tok.encode("a b c d e f g h i j k l");
    let p = encode_pair(&q, &t, 16, 36).unwrap();
    let b = PairBatch::new(&[p], &[None], 16, 36, Specials::of(&tok)).unwrap();
    assert_eq!(b.query_row(0).iter().filter(|&&x| x == 0).count(), 12);
    assert_eq!(b.item_row(0).iter().filter(|&&x| x == 0).count(), 24);

    let long = tok.encode(&vec!["a"; 20].join(" "));
    assert_eq!(encode_pair(&long, &t, 16, 36).unwrap().query_tokens.len(), 16);
    assert!(encode_pair(&q, &tok.encode(""), 16, 36).is_err());
    assert!(encode_pair(&tok.encode(" "), &t, 16, 36).is_err());
}

#[test]
fn trim_examples() {
    let b = batch(&[(4, 12), (2, 5), (3, 1)], 16, 36);
    let t = trim_batch(&b);
    assert_eq!((t.batch.query_len, t.batch.item_len), (4, 12));
    assert_eq!(t.seq_len(), 19);
    assert_eq!(b.seq_len(), 55);
    let f = measure_batch_flops(&b, &ModelConfig::default()).unwrap();
    assert!((f.mha_ratio - 0.1193).abs() < 1e-4);
    assert_eq!(f.mha_ratio, cost_ratio(19, 55).unwrap());

    let full = batch(&[(16, 36), (1, 1)], 16, 36);
    let tf = trim_batch(&full);
    assert_eq!(tf.batch, full);
    assert_eq!(measure_batch_flops(&full, &ModelConfig::default()).unwrap().mha_ratio, 1.0);

    let single = trim_batch(&batch(&[(2, 1)], 16, 36));
    assert_eq!((single.batch.query_len, single.batch.item_len), (2, 1));
    assert_eq!(single.column_map, vec![0, 1, 2, 17, 18, 54]);
}

#[test]
fn cost_ratio_examples() {
    assert_eq!(cost_ratio(52, 52).unwrap(), 1.0);
    assert!((cost_ratio(16, 52).unwrap() - 0.0947).abs() < 1e-4);
    assert_eq!(cost_ratio(26, 52).unwrap(), 0.25);
    assert!(cost_ratio(53, 52).is_err());
    assert!(cost_ratio(0, 52).is_err());
}

#[test]
fn measured_trim_flops_follow_the_square_law() {
    let cfg = ModelConfig::tiny(30);
    let model = Model::<f64>::new(cfg.clone(), 1).unwrap();
    let b = batch(&[(3, 5), (1, 2)], cfg.query_len, cfg.item_len);
    let t = trim_batch(&b);
    let (_, full) = model.logits_with_flops(&b.encoding()).unwrap();
    let (_, small) = model.logits_with_flops(&t.encoding()).unwrap();
    let (l, lp) = (b.seq_len() as u64, t.seq_len() as u64);
    assert_eq!(small.attention_macs * l * l, full.attention_macs * lp * lp);
}

#[test]
fn bucketing_covers_every_index_once() {
    let lengths: Vec<usize> = (0..103).map(|i| (i * 37) % 29).collect();
    let batches = bucket_by_length(&lengths, 10, &mut RngState::new(1));
    let mut all: Vec<usize> = batches.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    let spread: usize = batches
        .iter()
        .map(|b| b.iter().map(|&i| lengths[i]).max().unwrap() - b.iter().map(|&i| lengths[i]).min().unwrap())
        .max()
        .unwrap();
    assert!(spread <= 3, "{spread}");
}

fn lens_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
    proptest::collection::vec((1usize..=6, 1usize..=12), 1..8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trimmed_logits_match_padded(lens in lens_strategy(), seed in 0u64..1000) {
        let mut cfg = ModelConfig::tiny(30);
        cfg.init_std = 0.5;
        let model = Model::<f64>::new(cfg.clone(), seed).unwrap();
        let b = batch(&lens, cfg.query_len, cfg.item_len);
        let full = model.logits(&b.encoding()).unwrap();
        let trimmed = model.logits(&trim_batch(&b).encoding()).unwrap();
        prop_assert!(full.max_abs_diff(&trimmed).unwrap() <= 1e-10);
    }

    #[test]
    fn trim_is_idempotent_and_lossless(lens in lens_strategy()) {
        let b = batch(&lens, 6, 12);
        let t = trim_batch(&b);
        prop_assert_eq!(&trim_batch(&t.batch).batch, &t.batch);
        prop_assert!(t.batch.query_len <= b.query_len && t.batch.item_len <= b.item_len);
        let full = b.encoding();
        let small = t.encoding();
        for r in 0..b.n {
            for (j, &c) in t.column_map.iter().enumerate() {
                let (a, s) = (r * full.seq + c, r * small.seq + j);
                prop_assert_eq!(full.tokens[a], small.tokens[s]);
                prop_assert_eq!(full.positions[a], small.positions[s]);
                prop_assert_eq!(full.segments[a], small.segments[s]);
                prop_assert_eq!(full.ner[a], small.ner[s]);
            }
            let mut x: Vec<u32> = full.tokens[r * full.seq..][..full.seq].iter().copied().filter(|&t| t != 0).collect();
            let mut y: Vec<u32> = small.tokens[r * small.seq..][..small.seq].iter().copied().filter(|&t| t != 0).collect();
            x.sort_unstable();
            y.sort_unstable();
            prop_assert_eq!(x, y);
        }
        let mut seen = t.column_map.clone();
        seen.dedup();
        prop_assert_eq!(seen.len(), t.column_map.len());
    }

    #[test]
    fn adding_a_longer_row_never_shrinks(lens in lens_strategy(), extra in (1usize..=6, 1usize..=12)) {
        let t = trim_batch(&batch(&lens, 6, 12));
        let mut more = lens.clone();
        more.push(extra);
        let t2 = trim_batch(&batch(&more, 6, 12));
        prop_assert!(t2.batch.query_len >= t.batch.query_len);
        prop_assert!(t2.batch.item_len >= t.batch.item_len);
    }
}
