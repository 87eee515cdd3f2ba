//! Independent references shared by the integration tests: a central
//! finite-difference gradient oracle and brute-force metric definitions.
#![allow(dead_code)]

use rand::Rng;
use relevance::compute::{RngState, Tape, Tensor, Var};

pub fn random_tensor(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between the tape gradient of `Σ w ⊙ f(inputs)`
/// (random fixed `w`) and central differences with step `h`, over every
/// input element.
pub fn fd_max_rel_err<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> relevance::Result<Var>,
{
    let record = |ins: &[Tensor<f64>], w: Option<&Tensor<f64>>| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        let w = match w {
            Some(w) => w.clone(),
            None => random_tensor(tape.value(out).shape(), &mut RngState::new(99)),
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        let s = tape.sum(prod).unwrap();
        (tape, vars, s, w)
    };
    let (tape, vars, s, w) = record(inputs, None);
    let value = |ins: &[Tensor<f64>]| {
        let (tape, _, s, _) = record(ins, Some(&w));
        tape.value(s).item().unwrap()
    };
    let grads = tape.backward(s).unwrap();
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[i]).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; input.len()]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * h);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by enumerating every pair.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

/// `(micro, macro)` F1 from confusion counts at `score >= threshold`.
pub fn f1_counts(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64) {
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
    let f1_for = |c: u8| {
        let tp = pred.iter().zip(labels).filter(|(p, y)| **p == c && **y == c).count() as f64;
        let fp = pred.iter().zip(labels).filter(|(p, y)| **p == c && **y != c).count() as f64;
        let fneg = pred.iter().zip(labels).filter(|(p, y)| **p != c && **y == c).count() as f64;
        if 2.0 * tp + fp + fneg == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fneg)
        }
    };
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64;
    (correct / labels.len() as f64, (f1_for(0) + f1_for(1)) / 2.0)
}

/// Textbook sample correlation.
pub fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Rank of each value as 1 + (count below) + (count equal − 1)/2.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + below + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_ref(x: &[f64], y: &[f64]) -> f64 {
    pearson_ref(&midranks(x), &midranks(y))
}
