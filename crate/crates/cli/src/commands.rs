//! Subcommand definitions and their thin adapters over the library.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use relevance::data::{
    generate_corpus, load_frequencies, load_pairs, query_frequency, save_frequencies, save_pairs, Catalog, LabeledPair,
    PairFormat,
};
use relevance::model::Model;
use relevance::serve::{restore_cache, BenchConfig, CacheSnapshot, ScoreCache, ScoreRequest};
use relevance::text::{build_extended_vocab, subtoken_stats, word_frequencies, TermLexicon, Tokenizer, Vocabulary};
use relevance::train::{train_loop, write_history, Objective, TrainConfig, TrainOutcome};
use relevance::Scalar;
use serde_json::json;

use crate::config::Settings;
use crate::scorer::AnyScorer;
use crate::server::{self, AppState, DEFAULT_BODY_LIMIT};

#[derive(Debug, Parser)]
#[command(name = "relevance", version, about = "Query/item relevance: data, vocabulary, training, evaluation and serving")]
pub struct Cli {
    /// Flat JSON document of generator, model, training and cache settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed of the generator and the trainer.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub verbosity: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extends the base vocabulary with frequent whole words of a corpus.
    BuildVocab(BuildVocabArgs),
    /// Writes a synthetic labeled corpus, its lexicon and query frequencies.
    GenData(GenDataArgs),
    /// Trains a model and writes a checkpoint and a history file.
    Train(TrainArgs),
    /// Prints the metric report of a checkpoint on labeled pairs.
    Eval(EvalArgs),
    /// Scores candidate titles for one query.
    Score(ScoreArgs),
    /// Runs the HTTP scoring service.
    Serve(ServeArgs),
    /// Times scoring with the length scheme and the cache on and off.
    Bench(BenchArgs),
    /// Precomputes a cache snapshot from query and pair history.
    RefreshCache(RefreshArgs),
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Pair file whose words are counted (TSV or JSON lines).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Words added on top of the base vocabulary.
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    /// Base vocabulary file; the built-in one when omitted.
    #[arg(long)]
    pub base: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Pair file to write; `.jsonl` selects JSON lines, anything else TSV.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub lexicon_out: Option<PathBuf>,
    /// Query frequency list (query, count).
    #[arg(long)]
    pub frequencies_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Small batches and a larger step, for a single CPU.
    Desk,
    /// Batch 1024 and learning rate 2e-5.
    Published,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub valid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Vocabulary file; the base vocabulary when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Lexicon TSV; the built-in catalog lexicon when omitted.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// JSON-lines history; next to the checkpoint when omitted.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// bce, at (adversarial-only) or cat.
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled pair file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Scoring temperature; the checkpoint's when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Request JSON file ({"query", "candidates", "max_keep"}).
    #[arg(long, conflicts_with_all = ["query", "candidates"])]
    pub request: Option<PathBuf>,
    #[arg(long, requires = "candidates")]
    pub query: Option<String>,
    /// File with one candidate title per line.
    #[arg(long, requires = "query")]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub max_keep: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
    Both,
}

impl Toggle {
    fn values(self) -> Vec<bool> {
        match self {
            Toggle::On => vec![true],
            Toggle::Off => vec![false],
            Toggle::Both => vec![false, true],
        }
    }
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[arg(long)]
    pub no_cache: bool,
    /// Snapshot written by refresh-cache, loaded at start.
    #[arg(long)]
    pub cache_snapshot: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BODY_LIMIT)]
    pub max_body_bytes: usize,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Score padded batches instead of trimming all-pad columns.
    #[arg(long)]
    pub no_drs: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pair file; requests are formed per distinct query.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Toggle::Both)]
    pub drs: Toggle,
    #[arg(long, value_enum, default_value_t = Toggle::Both)]
    pub cache: Toggle,
    #[arg(long, default_value_t = 2)]
    pub passes: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct RefreshArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pair history whose most frequent pairs are precomputed.
    #[arg(long)]
    pub history: PathBuf,
    /// Ranked query list; derived from the history when omitted.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    /// Snapshot JSON to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::BuildVocab(a) => build_vocab(&a, &mut out),
        Command::GenData(a) => gen_data(&a, &settings, cli.seed, &mut out),
        Command::Train(a) => train(&a, &settings, cli.seed, &mut out),
        Command::Eval(a) => eval(&a, &mut out),
        Command::Score(a) => score(&a, &mut out),
        Command::Serve(a) => serve(&a, &settings),
        Command::Bench(a) => bench(&a, &mut out),
        Command::RefreshCache(a) => refresh(&a, &settings, &mut out),
    }
}

fn pairs(path: &Path) -> Result<Vec<LabeledPair>> {
    load_pairs(path, PairFormat::from_path(path)).with_context(|| format!("loading {}", path.display()))
}

fn build_vocab(a: &BuildVocabArgs, out: &mut impl Write) -> Result<()> {
    let corpus = pairs(&a.corpus)?;
    let base = match &a.base {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::base(),
    };
    let freq = word_frequencies(corpus.iter().flat_map(|p| [p.query.as_str(), p.title.as_str()]));
    let extended = build_extended_vocab(&freq, &base, a.top_k);
    let texts = || corpus.iter().map(|p| (p.query.as_str(), p.title.as_str()));
    let before = subtoken_stats(texts(), &base)?;
    let after = subtoken_stats(texts(), &extended)?;
    extended.save(&a.out)?;
    writeln!(out, "added {} tokens ({} total)", extended.len() - base.len(), extended.len())?;
    writeln!(out, "{:<10} {:>9} {:>9} {:>9}", "vocab", "per word", "per title", "per pair")?;
    for (name, s) in [("base", before), ("extended", after)] {
        writeln!(out, "{name:<10} {:>9.3} {:>9.3} {:>9.3}", s.per_word, s.per_title, s.per_pair)?;
    }
    Ok(())
}

fn gen_data(a: &GenDataArgs, settings: &Settings, seed: Option<u64>, out: &mut impl Write) -> Result<()> {
    let mut cfg = settings.gen(seed)?;
    if let Some(n) = a.n_pairs {
        cfg.n_pairs = n;
    }
    let corpus = generate_corpus(&cfg)?;
    save_pairs(&corpus.pairs, &a.out, PairFormat::from_path(&a.out))?;
    if let Some(p) = &a.lexicon_out {
        corpus.lexicon.save(p)?;
    }
    if let Some(p) = &a.frequencies_out {
        save_frequencies(&query_frequency(corpus.pairs.iter().map(|p| p.query.as_str()))?, p)?;
    }
    let positives = corpus.pairs.iter().filter(|p| p.is_positive()).count();
    writeln!(out, "wrote {} pairs ({positives} positive) to {}", corpus.pairs.len(), a.out.display())?;
    Ok(())
}

fn tokenizer(vocab: Option<&Path>, lexicon: Option<&Path>) -> Result<Tokenizer> {
    let vocab = match vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::base(),
    };
    let lexicon = match lexicon {
        Some(p) => TermLexicon::load(p)?,
        None => Catalog::builtin().lexicon(),
    };
    Ok(Tokenizer::new(vocab, lexicon))
}

fn train(a: &TrainArgs, settings: &Settings, seed: Option<u64>, out: &mut impl Write) -> Result<()> {
    let base = match a.preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Published => TrainConfig::published(),
    };
    let mut cfg = settings.train(base, seed)?;
    if let Some(o) = a.objective {
        cfg = cfg.with_objective(o);
    }
    let tok = tokenizer(a.vocab.as_deref(), a.lexicon.as_deref())?;
    let mcfg = settings.model(tok.vocab.len())?;
    let (train_set, valid_set) = (pairs(&a.train)?, pairs(&a.valid)?);
    let history_path = a.history.clone().unwrap_or_else(|| a.out.with_extension("history.jsonl"));
    let meta = |best: f64, epochs: usize| {
        json!({
            "tokenizer": tok.to_meta(),
            "train_config": cfg,
            "best_val_auc": best,
            "epochs_run": epochs,
        })
    };

    fn finish<T: Scalar>(o: &TrainOutcome<T>, meta: serde_json::Value, path: &Path) -> Result<String> {
        let ckpt = o.model.checkpoint(meta);
        ckpt.save(path)?;
        Ok(ckpt.fingerprint()?)
    }
    let (history, best, epochs, steps, id) = match a.precision {
        Precision::F32 => {
            let o = train_loop(Model::<f32>::new(mcfg, cfg.seed)?, &tok, &train_set, &valid_set, &cfg)?;
            let id = finish(&o, meta(o.best_val_auc, o.epochs_run), &a.out)?;
            (o.history, o.best_val_auc, o.epochs_run, o.steps, id)
        }
        Precision::F64 => {
            let o = train_loop(Model::<f64>::new(mcfg, cfg.seed)?, &tok, &train_set, &valid_set, &cfg)?;
            let id = finish(&o, meta(o.best_val_auc, o.epochs_run), &a.out)?;
            (o.history, o.best_val_auc, o.epochs_run, o.steps, id)
        }
    };
    write_history(&history, std::io::BufWriter::new(std::fs::File::create(&history_path)?))?;
    writeln!(
        out,
        "{epochs} epochs, {steps} steps, best validation AUC {best:.4}\ncheckpoint {} ({id})\nhistory {}",
        a.out.display(),
        history_path.display()
    )?;
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let scorer = AnyScorer::load(&a.checkpoint)?.configure(a.tau, None, None);
    let report = scorer.evaluate(&pairs(&a.data)?, a.threshold)?;
    if a.json {
        writeln!(out, "{}", report.to_json())?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(())
}

fn score(a: &ScoreArgs, out: &mut impl Write) -> Result<()> {
    let scorer = AnyScorer::load(&a.checkpoint)?.configure(a.tau, None, None);
    let mut request: ScoreRequest = match (&a.request, &a.query, &a.candidates) {
        (Some(p), _, _) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing {}", p.display()))?,
        (None, Some(q), Some(c)) => ScoreRequest {
            query: q.clone(),
            candidates: std::fs::read_to_string(c)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(str::to_string)
                .collect(),
            max_keep: None,
        },
        _ => bail!("give either --request or both --query and --candidates"),
    };
    if a.max_keep.is_some() {
        request.max_keep = a.max_keep;
    }
    let response = scorer.score(None, &request)?;
    writeln!(out, "{}", serde_json::to_string(&response)?)?;
    Ok(())
}

fn serve(a: &ServeArgs, settings: &Settings) -> Result<()> {
    let scorer = AnyScorer::load(&a.checkpoint)?.configure(a.tau, None, Some(!a.no_drs));
    let cache = if a.no_cache {
        None
    } else if let Some(p) = &a.cache_snapshot {
        let snap: CacheSnapshot = serde_json::from_str(&std::fs::read_to_string(p)?)?;
        Some(restore_cache(&snap, scorer.tokenizer())?)
    } else {
        Some(ScoreCache::new(settings.cache()?))
    };
    let state = Arc::new(AppState::new(scorer, cache));
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(server::run(&a.addr, state, a.max_body_bytes))
}

fn bench(a: &BenchArgs, out: &mut impl Write) -> Result<()> {
    let scorer = AnyScorer::load(&a.checkpoint)?;
    let cfg = BenchConfig {
        batch_size: a.batch_size,
        passes: a.passes,
        tau: scorer.tau(),
        drs: a.drs.values(),
        cache: a.cache.values(),
    };
    let report = scorer.bench(&pairs(&a.data)?, &cfg)?;
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
    } else {
        write!(out, "{report}")?;
    }
    Ok(())
}

fn refresh(a: &RefreshArgs, settings: &Settings, out: &mut impl Write) -> Result<()> {
    let scorer = AnyScorer::load(&a.checkpoint)?;
    let history = pairs(&a.history)?;
    let ranked = match &a.frequencies {
        Some(p) => load_frequencies(p)?,
        None if history.is_empty() => Vec::new(),
        None => query_frequency(history.iter().map(|p| p.query.as_str()))?,
    };
    let cache = scorer.refresh(&ranked, &history, settings.cache()?, &settings.refresh()?)?;
    let snap = cache.snapshot();
    std::fs::write(&a.out, serde_json::to_string(&snap)?)?;
    writeln!(
        out,
        "cached {} query token entries and {} pair scores in {}",
        snap.queries.len(),
        snap.scores.len(),
        a.out.display()
    )?;
    Ok(())
}
