use std::io::Write;

use serde::{Deserialize, Serialize};

use super::augment::{negative_assignment, word_drop};
use super::config::{temperature, TrainConfig, TrainMode};
use super::loss::LossBreakdown;
use super::step::{bce_train_step, train_step, TrainState};
use crate::batching::{bucket_by_length, encode_pair, sequential_batches, trim_batch, EncodedPair, PairBatch, Specials};
use crate::compute::RngState;
use crate::data::LabeledPair;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::model::Model;
use crate::scalar::Scalar;
use crate::text::{TokenizedText, Tokenizer};

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HistoryRecord {
    Step {
        step: u64,
        l_bce: f64,
        l_ate: f64,
        l_adv: f64,
        total: f64,
        tau: f64,
        lr: f64,
    },
    Epoch {
        epoch: usize,
        val_auc: f64,
        val_f1_micro: f64,
        val_f1_macro: f64,
    },
}

impl HistoryRecord {
    fn step(step: u64, l: &LossBreakdown, tau: f64, lr: f64) -> Self {
        HistoryRecord::Step {
            step,
            l_bce: l.l_bce,
            l_ate: l.l_ate,
            l_adv: l.l_adv,
            total: l.total,
            tau,
            lr,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_history(records: &[HistoryRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history(text: &str) -> Result<Vec<HistoryRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Result of a training run: the best-validation model and the history.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub history: Vec<HistoryRecord>,
    pub best_val_auc: f64,
    pub epochs_run: usize,
    pub steps: u64,
    pub forward_passes: u64,
}

struct Prepared {
    query: TokenizedText,
    title: TokenizedText,
    label: usize,
}

fn encode(query: &TokenizedText, title: &TokenizedText, model: &crate::model::ModelConfig) -> Result<EncodedPair> {
    encode_pair(query, title, model.query_len, model.item_len)
}

/// Trains `model` on `train`, validating on `validation` after each epoch
/// and keeping the weights with the best validation AUC. Stops after
/// `epochs`, or once more than `patience` consecutive epochs fail to
/// improve. Every source of randomness derives from `config.seed`.
pub fn train_loop<T: Scalar>(
    model: Model<T>,
    tokenizer: &Tokenizer,
    train: &[LabeledPair],
    validation: &[LabeledPair],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training corpus is empty".into()));
    }
    if validation.is_empty() {
        return Err(Error::Input("validation split is empty".into()));
    }
    let mcfg = model.config.clone();
    let specials = Specials::of(tokenizer);
    let prepared = train
        .iter()
        .map(|p| {
            let label = p.label.ok_or_else(|| Error::Input("training pairs must be labeled".into()))?;
            Ok(Prepared {
                query: tokenizer.encode(&p.query),
                title: tokenizer.encode(&p.title),
                label: usize::from(label),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fixed: Option<Vec<EncodedPair>> = if config.word_drop_rate == 0.0 {
        Some(prepared.iter().map(|p| encode(&p.query, &p.title, &mcfg)).collect::<Result<_>>()?)
    } else {
        None
    };

    let root = RngState::new(config.seed);
    let mut order_rng = root.fork(1);
    let mut augment_rng = root.fork(2);
    let mut state = TrainState::new(model.params, config.seed);
    state.rng = root.fork(3);

    let batches_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let total_steps = batches_per_epoch * config.epochs as u64;
    let tau_eval = config.temperature.tau_min;
    let mut best = state.params.clone();
    let mut history = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        let encoded: Vec<EncodedPair> = match &fixed {
            Some(e) => e.clone(),
            None => prepared
                .iter()
                .map(|p| {
                    let (q, t) = word_drop(&p.query, &p.title, config.word_drop_rate, &mut augment_rng)?;
                    encode(&q, &t, &mcfg)
                })
                .collect::<Result<_>>()?,
        };
        let batches = if config.length_bucketing {
            let lengths: Vec<usize> = encoded.iter().map(|e| e.query_tokens.len() + e.item_tokens.len()).collect();
            bucket_by_length(&lengths, config.batch_size, &mut order_rng)
        } else {
            let mut b = sequential_batches(encoded.len(), config.batch_size);
            rand::seq::SliceRandom::shuffle(b.as_mut_slice(), &mut order_rng);
            b
        };
        for idx in batches {
            let mut pairs: Vec<EncodedPair> = idx.iter().map(|&i| encoded[i].clone()).collect();
            let mut labels: Vec<usize> = idx.iter().map(|&i| prepared[i].label).collect();
            if config.in_batch_negatives {
                let titles: Vec<String> = idx.iter().map(|&i| prepared[i].title.words.join(" ")).collect();
                let refs: Vec<&str> = titles.iter().map(String::as_str).collect();
                for (a, b) in negative_assignment(&refs, &mut augment_rng) {
                    pairs.push(EncodedPair {
                        item_tokens: pairs[b].item_tokens.clone(),
                        item_ner: pairs[b].item_ner.clone(),
                        ..pairs[a].clone()
                    });
                    labels.push(0);
                }
            }
            let opt: Vec<Option<u8>> = labels.iter().map(|&l| Some(l as u8)).collect();
            let batch = PairBatch::new(&pairs, &opt, mcfg.query_len, mcfg.item_len, specials)?;
            let enc = trim_batch(&batch).encoding();
            let tau = temperature(state.step, total_steps, &config.temperature);
            let step = state.step;
            let losses = match config.mode {
                TrainMode::Contrastive => train_step(&mut state, &enc, &labels, &mcfg, config, tau)?,
                TrainMode::PlainBce => bce_train_step(&mut state, &enc, &labels, &mcfg, config, tau)?,
            };
            tracing::debug!(step, total = losses.total, tau, "train step");
            history.push(HistoryRecord::step(step, &losses, tau, config.learning_rate));
        }
        epochs_run += 1;

        let current = Model::from_parts(mcfg.clone(), state.params.clone())?;
        let report = evaluate(&current, tokenizer, validation, tau_eval, 0.5)?;
        history.push(HistoryRecord::Epoch {
            epoch,
            val_auc: report.auc,
            val_f1_micro: report.f1_micro,
            val_f1_macro: report.f1_macro,
        });
        let improved = state.observe_validation(report.auc);
        tracing::info!(epoch, val_auc = report.auc, improved, "epoch finished");
        if improved {
            best = state.params.clone();
        } else if state.epochs_since_improvement > config.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        model: Model::from_parts(mcfg, best)?,
        history,
        best_val_auc: state.best_val_auc.expect("at least one epoch ran"),
        epochs_run,
        steps: state.step,
        forward_passes: state.forward_passes,
    })
}
