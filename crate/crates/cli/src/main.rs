//! `lcmt` command-line interface.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcmt::{Error, Precision};
use serde::Serialize;

/// Length- and complexity-constrained sequence transduction.
#[derive(Debug, Parser, Serialize)]
#[command(name = "lcmt", version, args_override_self = true)]
pub struct Cli {
    /// Root random seed.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Floating-point precision for training and decoding.
    #[arg(long, global = true, default_value = "f32", value_parser = parse_precision)]
    pub precision: Precision,
    /// File of `key = value` lines supplying defaults for the command's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse()
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate synthetic parallel corpora.
    GenData(GenDataArgs),
    /// Learn or apply BPE merges.
    Bpe(BpeArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Translate a file under a length or complexity constraint.
    Translate(TranslateArgs),
    /// Score hypotheses.
    Evaluate(EvaluateArgs),
    /// Run a desk-scale experiment table.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated directions, e.g. `L1-E,E-L1`.
    #[arg(long, default_value = "L1-E")]
    pub langs: String,
    #[arg(long, default_value_t = 20_000)]
    pub train: usize,
    #[arg(long, default_value_t = 500)]
    pub valid: usize,
    #[arg(long, default_value_t = 500)]
    pub test: usize,
    #[arg(long, default_value_t = 40)]
    pub alphabet_size: usize,
    #[arg(long, default_value_t = 3)]
    pub min_symbols: usize,
    #[arg(long, default_value_t = 8)]
    pub max_symbols: usize,
    #[arg(long, default_value_t = 4)]
    pub satellites: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p_short: f64,
    #[arg(long, default_value_t = 0.1)]
    pub p_drop: f64,
}

#[derive(Debug, Args, Serialize)]
#[command(group = clap::ArgGroup::new("action").required(true).args(["learn", "apply", "undo"]))]
pub struct BpeArgs {
    /// Learn merges from the input files and write them to `--codes`.
    #[arg(long)]
    pub learn: bool,
    /// Segment the input with the merges in `--codes`.
    #[arg(long)]
    pub apply: bool,
    /// Join segmented input back into words.
    #[arg(long)]
    pub undo: bool,
    /// Number of merges to learn.
    #[arg(long, default_value_t = 10_000)]
    pub merges: usize,
    /// Merges file.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    #[arg(long, required = true)]
    pub input: Vec<PathBuf>,
    /// Output file for `--apply`/`--undo` (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Directory with `train.<SRC>-<TGT>.{src,tgt}` and `valid.*` files.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated directions to train on.
    #[arg(long, default_value = "L1-E")]
    pub langs: String,
    #[arg(long, default_value = "none")]
    pub mode: String,
    /// Output directory for the model, vocabulary, logs and resumable state.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: u64,
    /// Validation and state-saving interval.
    #[arg(long, default_value_t = 250)]
    pub save_every: u64,
    /// Number of best validation checkpoints to average.
    #[arg(long, default_value_t = 3)]
    pub average_k: usize,
    /// Continue from the state saved in `<out>/state`.
    #[arg(long)]
    pub resume: bool,
    /// Prepend target-language tags even for a single target language.
    #[arg(long)]
    pub tagged: bool,
    #[arg(long, default_value_t = 512)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 400)]
    pub warmup: u64,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 256)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    /// Remaining-length embedding width (default `d_model / 8`).
    #[arg(long)]
    pub d_len: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, default_value_t = 0.1)]
    pub word_dropout: f64,
    #[arg(long, default_value_t = 24)]
    pub max_seq_len: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TranslateArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `none`, `soft[:R]`, `hard[:R]` or `oracle`.
    #[arg(long, default_value = "none")]
    pub constraint: String,
    /// Length ratio for a bare `soft`/`hard` constraint.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Reference file; required by `oracle`.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Maximum continuation tokens per sentence.
    #[arg(long)]
    pub complexity_budget: Option<usize>,
    /// Per-step log-penalty on continuation tokens.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long)]
    pub target_lang: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyps: PathBuf,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Source file; needed for `length` with a ratio and for `content`.
    #[arg(long)]
    pub src: Option<PathBuf>,
    /// Comma-separated subset of `bleu,length,content,complexity`.
    #[arg(long, default_value = "bleu")]
    pub metrics: String,
    /// Length target used by `length` and `content`: `soft:R`, `hard:R` or `oracle`.
    #[arg(long)]
    pub constraint: Option<String>,
    /// Also write `<stem>.tsv` and `<stem>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// `length_distance`, `quality`, `multilingual`, `cascade`, `simplification` or `all`.
    #[arg(long, default_value = "all")]
    pub table: String,
    /// `desk` (full setting) or `smoke` (seconds, for plumbing checks).
    #[arg(long, default_value = "desk")]
    pub scale: String,
    /// Override the training steps per single-direction system.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Directory caching trained systems between runs.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Directory receiving `<table>.tsv` and `<table>.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failures with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Constraint(String),
    Internal(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Constraint(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Constraint(m) | CliError::Internal(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Config(_) => CliError::Usage(m),
            Error::Constraint(_) => CliError::Constraint(m),
            Error::Data(_) | Error::Format(_) | Error::Io(_) | Error::Empty { .. } => CliError::Data(m),
            Error::Shape { .. } | Error::Backward(_) | Error::NonFinite(_) => CliError::Internal(m),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let args = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.message());
            return ExitCode::from(e.code());
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    log::info!("resolved configuration:\n{}", config::describe(&cli));
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
