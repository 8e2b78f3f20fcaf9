//! Command-line driver for the entity normalization engine.
//!
//! Subcommands cover the full pipeline: `gensynth` writes a synthetic
//! benchmark, `fit-sparse` fits the tf-idf model, `train` runs synonym
//! marginalization training, `eval` reports Acc@k, `predict` resolves a
//! single mention, and `candidates` dumps per-epoch candidate lists for
//! inspection.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<entnorm::Error> for CliError {
    fn from(e: entnorm::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "entnorm", version, about = "Dictionary-backed entity normalization")]
struct Cli {
    /// Run everything on a single thread (bit-identical to parallel mode).
    #[arg(long, global = true)]
    serial: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train encoder parameters and lambda on a mention set.
    Train(TrainArgs),
    /// Evaluate a checkpoint: Acc@k report as JSON on stdout.
    Eval(EvalArgs),
    /// Resolve one mention: top-k CUIs as TSV on stdout.
    Predict(PredictArgs),
    /// Dump per-epoch candidate lists for a mention file as TSV on stdout.
    Candidates(CandidatesArgs),
    /// Generate a seeded synthetic dictionary plus train/test mentions.
    Gensynth(GensynthArgs),
    /// Fit the character n-gram tf-idf model over a dictionary.
    FitSparse(FitSparseArgs),
}

#[derive(Args)]
struct CommonMaps {
    /// Abbreviation expansions, two-column TSV `short \t long`.
    #[arg(long)]
    abbrev: Option<PathBuf>,
    /// Spelling substitutions, two-column TSV `short \t long`.
    #[arg(long)]
    spelling: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dictionary file, one `CUI||name` per line.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Training mentions, one `mention||CUI` per line.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Output directory for checkpoints, tf-idf model, and metrics log.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    maps: CommonMaps,
    /// Number of candidates per mention.
    #[arg(long)]
    k: Option<usize>,
    /// Dense candidate ratio in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Training objective: mml, hard_em, or pairwise.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dense encoder hidden dimension.
    #[arg(long)]
    h: Option<usize>,
    /// Dense encoder hash bucket count.
    #[arg(long)]
    buckets: Option<usize>,
    #[arg(long)]
    max_chars: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Encoder checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Test mentions, one `mention||CUI` per line.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Tf-idf model file; defaults to `tfidf.model` next to the checkpoint.
    #[arg(long)]
    tfidf: Option<PathBuf>,
    #[command(flatten)]
    maps: CommonMaps,
    /// Comma-separated Acc@k cutoffs.
    #[arg(long, default_value = "1,5")]
    ks: String,
    /// Scoring channels: hybrid, sparse, or dense.
    #[arg(long, default_value = "hybrid")]
    score: String,
    /// Optional TSV of failed mentions.
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    #[arg(long)]
    tfidf: Option<PathBuf>,
    #[command(flatten)]
    maps: CommonMaps,
    /// Raw mention string to resolve.
    #[arg(long)]
    mention: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value = "hybrid")]
    score: String,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct CandidatesArgs {
    /// Directory holding `checkpoint-epoch-*.ckpt` files.
    #[arg(long)]
    checkpoint_dir: PathBuf,
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Mention file whose components get candidate dumps.
    #[arg(long)]
    mentions: Option<PathBuf>,
    #[arg(long)]
    tfidf: Option<PathBuf>,
    #[command(flatten)]
    maps: CommonMaps,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct GensynthArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Number of concepts (>= 2).
    #[arg(long, default_value_t = 200)]
    cuis: usize,
    #[arg(long, default_value_t = 5)]
    syns_per_cui: usize,
    #[arg(long, default_value_t = 500)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    /// Comma-separated ops: identity, typo, suffix, reorder, abbrev.
    #[arg(long, default_value = "typo,suffix,reorder")]
    variation: String,
    /// Concepts per shared-head group.
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// Fraction of test mentions from the hard distribution.
    #[arg(long, default_value_t = 0.35)]
    hard_fraction: f64,
    /// Output directory for dict.txt, train.txt, test.txt.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitSparseArgs {
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Output path for the tf-idf model file.
    #[arg(long)]
    out: PathBuf,
    /// Keep raw tf-idf weights instead of L2-normalized vectors.
    #[arg(long)]
    no_l2_norm: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.serial {
        entnorm::exec::set_sequential(true);
    }
    let result = match cli.command {
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Predict(args) => commands::predict(args),
        Command::Candidates(args) => commands::candidates(args),
        Command::Gensynth(args) => commands::gensynth(args),
        Command::FitSparse(args) => commands::fit_sparse(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
