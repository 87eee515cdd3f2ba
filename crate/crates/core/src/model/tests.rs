use super::*;
use crate::compute::RngState;

/// `[CLS] q.. pads [SEP] t.. pads [SEP]` rows with random lengths and
/// compact positions.
pub(crate) fn random_encoding(cfg: &ModelConfig, n: usize, rng: &mut RngState) -> InputEncoding {
    let l = cfg.seq_len();
    let mut enc = InputEncoding {
        batch: n,
        seq: l,
        tokens: Vec::new(),
        segments: Vec::new(),
        positions: Vec::new(),
        ner: Vec::new(),
        mask: Vec::new(),
    };
    for _ in 0..n {
        let lq = 1 + rng.below(cfg.query_len);
        let li = 1 + rng.below(cfg.item_len);
        let mut row: Vec<(u32, u32)> = vec![(2, 0)];
        row.extend((0..cfg.query_len).map(|i| (if i < lq { 5 + rng.below(cfg.vocab_size - 5) as u32 } else { 0 }, 0)));
        row.push((3, 0));
        row.extend((0..cfg.item_len).map(|i| (if i < li { 5 + rng.below(cfg.vocab_size - 5) as u32 } else { 0 }, 1)));
        row.push((3, 1));
        let mut pos = 0;
        for (tok, seg) in row {
            enc.tokens.push(tok);
            enc.segments.push(seg);
            enc.mask.push(tok != 0);
            enc.ner.push(if tok == 0 { 0 } else { rng.below(cfg.ner_tags) as u32 });
            enc.positions.push(if tok == 0 { 0 } else { pos });
            if tok != 0 {
                pos += 1;
            }
        }
    }
    enc
}

fn tiny_model(seed: u64) -> Model<f64> {
    let mut cfg = ModelConfig::tiny(40);
    cfg.init_std = 0.5;
    Model::new(cfg, seed).unwrap()
}

#[test]
fn init_is_deterministic_and_scaled() {
    let cfg = ModelConfig::default().with_vocab(2000);
    let a = init_params::<f64>(&cfg, 9).unwrap();
    assert_eq!(a, init_params::<f64>(&cfg, 9).unwrap());
    assert_ne!(a, init_params::<f64>(&cfg, 10).unwrap());
    let t = &a.embeddings.token;
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let std = (t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!((std - 0.02).abs() < 0.002, "std {std}");
    assert!(t.data().iter().all(|x| x.abs() <= 2.0 * 0.02 / 0.8796 + 1e-12));
    assert!(a.layers[0].ln1_g.data().iter().all(|&x| x == 1.0));
    assert!(a.layers[0].b1.data().iter().all(|&x| x == 0.0));

    let zero = init_params::<f64>(&ModelConfig { init_std: 0.0, ..cfg.clone() }, 9).unwrap();
    assert!(zero.layers[1].w2.data().iter().all(|&x| x == 0.0));
    assert!(matches!(init_params::<f64>(&ModelConfig { head_dim: 31, ..cfg }, 0), Err(Error::Config(_))));
}

#[test]
fn logits_are_finite_and_row_independent() {
    let m = tiny_model(1);
    let mut rng = RngState::new(3);
    let enc = random_encoding(&m.config, 5, &mut rng);
    let z = m.logits(&enc).unwrap();
    assert_eq!(z.shape(), &[5, 2]);
    assert!(z.all_finite());
    let perm = [3, 0, 4, 1, 2];
    let zp = m.logits(&enc.select_rows(&perm)).unwrap();
    for (i, &p) in perm.iter().enumerate() {
        assert_eq!(zp.row(i), z.row(p));
    }
    assert_eq!(m.logits(&enc).unwrap(), z);
}

#[test]
fn ner_ids_change_embeddings() {
    let m = tiny_model(2);
    let mut rng = RngState::new(4);
    let enc = random_encoding(&m.config, 2, &mut rng);
    let mut other = enc.clone();
    other.ner[1] = (other.ner[1] + 1) % m.config.ner_tags as u32;
    let embed = |e: &InputEncoding| {
        let mut tape = Tape::<f64>::new();
        let vars = constants_on_tape(&mut tape, &m.params);
        let x = embed_inputs(&mut tape, &vars, &m.config, e, false, &mut RngState::new(0)).unwrap();
        tape.value(x).clone()
    };
    assert_eq!(embed(&enc).shape(), &[2 * m.config.seq_len(), 8]);
    assert_ne!(embed(&enc), embed(&other));
}

#[test]
fn appended_pad_columns_do_not_move_logits() {
    let m = tiny_model(5);
    let mut rng = RngState::new(6);
    let mut cfg = m.config.clone();
    cfg.max_positions = cfg.seq_len() + 4;
    let m = Model::<f64>::new(cfg, 5).unwrap();
    let enc = random_encoding(&m.config, 4, &mut rng);
    let extra = 4;
    let l = enc.seq;
    let mut wide = InputEncoding {
        batch: enc.batch,
        seq: l + extra,
        ..enc.clone()
    };
    for v in [&mut wide.tokens, &mut wide.segments, &mut wide.positions, &mut wide.ner] {
        *v = v.chunks(l).flat_map(|r| r.iter().copied().chain(std::iter::repeat_n(0, extra))).collect();
    }
    wide.mask = wide.tokens.iter().map(|&t| t != 0).collect();
    let d = m.logits(&enc).unwrap().max_abs_diff(&m.logits(&wide).unwrap()).unwrap();
    assert!(d <= 1e-10, "{d}");
}

#[test]
fn encoding_validation() {
    let m = tiny_model(0);
    let mut enc = random_encoding(&m.config, 1, &mut RngState::new(0));
    enc.tokens[0] = 999;
    assert!(matches!(m.logits(&enc), Err(Error::Bounds { .. })));
    let mut enc = random_encoding(&m.config, 1, &mut RngState::new(0));
    enc.mask[0] = false;
    assert!(m.logits(&enc).is_err());
}

#[test]
fn score_head() {
    let z = Tensor::<f64>::from_rows(&[vec![0.0, 2.0], vec![1.5, 1.5], vec![2.0, 0.0]]).unwrap();
    let s = relevance_score(&z, 1.0).unwrap();
    assert!((s[0] - 0.8808).abs() < 1e-4);
    assert_eq!(s[1], 0.5);
    assert!((s[0] + s[2] - 1.0).abs() < 1e-12);
    let mut last: f64 = 0.0;
    for tau in [0.5, 1.0, 2.0, 8.0, 32.0] {
        let p = relevance_score(&z, tau).unwrap()[0];
        assert!(p > last && p <= 1.0);
        last = p;
    }
    assert!(relevance_score(&z, 0.0).is_err());
}

#[test]
fn complexity_scaling() {
    let cfg = ModelConfig::default();
    let full = complexity_estimate(&cfg, 32, 52);
    let half_n = complexity_estimate(&cfg, 16, 52);
    assert_eq!(half_n.mha_flops * 2, full.mha_flops);
    assert_eq!(half_n.ffn_flops * 2, full.ffn_flops);
    let half_l = complexity_estimate(&cfg, 32, 26);
    assert_eq!(half_l.mha_flops * 4, full.mha_flops);
    assert_eq!(half_l.ffn_flops * 2, full.ffn_flops);
    let short = complexity_estimate(&cfg, 32, 16);
    let ratio = short.mha_flops as f64 / full.mha_flops as f64;
    assert!((ratio - 0.0947).abs() < 1e-4);
}

#[test]
fn measured_attention_flops_match_estimate() {
    let m = tiny_model(7);
    let enc = random_encoding(&m.config, 3, &mut RngState::new(1));
    let (_, flops) = m.logits_with_flops(&enc).unwrap();
    let est = complexity_estimate(&m.config, 3, m.config.seq_len());
    assert_eq!(2 * flops.attention_macs, est.mha_flops);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let m = tiny_model(8);
    let ck = m.checkpoint(serde_json::json!({"vocab_base_len": 40}));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back, ck);
    for ((_, a), (_, b)) in back.params.named().into_iter().zip(ck.params.named()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.fingerprint().unwrap(), ck.fingerprint().unwrap());
    assert!(Checkpoint::<f32>::load(&path).is_err());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    let bytes = std::fs::read(&path).unwrap();
    assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn single_precision_tracks_double() {
    let m = tiny_model(11);
    let enc = random_encoding(&m.config, 4, &mut RngState::new(2));
    let s64 = m.scores(&enc, 1.0).unwrap();
    let s32 = m.cast::<f32>().scores(&enc, 1.0).unwrap();
    for (a, b) in s64.iter().zip(&s32) {
        assert!((a - *b as f64).abs() < 1e-5, "{a} vs {b}");
    }
}

/// Central differences on the mean cross-entropy over a random subset of
/// parameter entries, with dropout active and a fixed mask stream.
#[test]
fn full_model_gradient_check() {
    let mut cfg = ModelConfig::tiny(30);
    cfg.init_std = 0.3;
    cfg.dropout = 0.1;
    let params = init_params::<f64>(&cfg, 21).unwrap();
    let enc = random_encoding(&cfg, 3, &mut RngState::new(22));
    let labels = [1usize, 0, 1];
    let loss = |p: &EncoderParams<f64>| -> (f64, Option<crate::compute::Gradients<f64>>, EncoderWeights<crate::compute::Var>) {
        let mut tape = Tape::new();
        let vars = params_on_tape(&mut tape, p);
        let out = forward(&mut tape, &vars, &cfg, &enc, true, &mut RngState::new(5), None).unwrap();
        let l = tape.cross_entropy(out.logits, &labels, 1.0).unwrap();
        let v = tape.value(l).item().unwrap();
        (v, Some(tape.backward(l).unwrap()), vars)
    };
    let (_, grads, vars) = loss(&params);
    let grads = grads.unwrap();
    let mut rng = RngState::new(23);
    let h = 1e-5;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let var_list: Vec<crate::compute::Var> = vars.named().into_iter().map(|(_, v)| *v).collect();
    let mut worst: f64 = 0.0;
    for (ti, name) in names.iter().enumerate() {
        let len = params.named()[ti].1.len();
        let g = grads.get(var_list[ti]).unwrap();
        for _ in 0..3 {
            let idx = rng.below(len);
            let bump = |delta: f64| {
                let mut p = params.clone();
                let t = p.values_mut().into_iter().nth(ti).unwrap();
                t.data_mut()[idx] += delta;
                loss(&p).0
            };
            let numeric = (bump(h) - bump(-h)) / (2.0 * h);
            let analytic = g.data()[idx];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            assert!(rel < 1e-3, "{name}[{idx}]: analytic {analytic} numeric {numeric}");
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3);
}
