//! `ifthen`: prepare, train, evaluate and predict from one binary.
//!
//! Exit codes: 0 success, 1 IO failure, 2 validation or configuration error,
//! 3 numeric failure during training.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ifthen_core::Family;

pub use config::{Overrides, Precision, RunConfig, CONFIG_ENV};
pub use error::{CliError, CliResult, ExitCode};
pub use manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "ifthen", version, about = "Translate descriptions into If-Then recipes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a dataset, split it and build vocabularies
    Prepare(PrepareArgs),
    /// Train a model on a prepared data directory
    Train(TrainArgs),
    /// Score a checkpoint on a dataset file
    Evaluate(EvaluateArgs),
    /// Decode recipes for one text or a file of texts
    Predict(PredictArgs),
}

#[derive(Clone, Debug, Args, serde::Serialize)]
pub struct PrepareArgs {
    /// Line-delimited JSON dataset to clean and split into train and valid
    #[arg(long)]
    pub input: PathBuf,
    /// Directory receiving the prepared files
    #[arg(long)]
    pub output: PathBuf,
    /// Separate test set; otherwise `--test-count` examples are held out of the input
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Examples held out of the input as the test set when `--test` is absent
    #[arg(long, default_value_t = 0, conflicts_with = "test")]
    pub test_count: usize,
    /// Drop examples whose title has fewer words; 0 disables
    #[arg(long, default_value_t = 3)]
    pub min_title_words: usize,
    /// Drop titles that do not look English
    #[arg(long)]
    pub english_only: bool,
    /// Keep test examples only when this many annotators match the gold recipe
    #[arg(long, requires = "test")]
    pub min_agreement: Option<usize>,
    /// Number of training examples held out for validation
    #[arg(long, conflicts_with = "valid_fraction")]
    pub valid_count: Option<usize>,
    /// Fraction of training examples held out for validation when no count is given
    #[arg(long, default_value_t = 0.1)]
    pub valid_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Append descriptions to titles after a [SEP] token
    #[arg(long)]
    pub use_description: bool,
    /// Skip malformed lines instead of failing
    #[arg(long)]
    pub lenient: bool,
    /// Validate arguments and print the plan without writing anything
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// Model family: lstm, stacked_rnn or transformer
    #[arg(long, value_parser = parse_family)]
    pub arch: Option<Family>,
    /// Directory written by `prepare`
    #[arg(long)]
    pub data: PathBuf,
    /// TOML config with optional `precision`, `[model]` and `[train]` sections
    #[arg(long, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Directory receiving checkpoints, history and the manifest
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Base learning rate for the constant schedule
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub validate_every: Option<u64>,
    /// Print the resolved config and exit
    #[arg(long)]
    pub dry_run: bool,
}

impl TrainArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            arch: self.arch,
            precision: self.precision,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed: self.seed,
            max_steps: self.max_steps,
            validate_every: self.validate_every,
        }
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: ifthen_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
}

#[derive(Clone, Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to score
    #[arg(long)]
    pub model: PathBuf,
    /// Line-delimited JSON dataset with gold recipes
    #[arg(long)]
    pub data: PathBuf,
    /// Where the JSON report is written
    #[arg(long)]
    pub report: PathBuf,
    /// Summary printed to standard output
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
    /// Also write one prediction record per example
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

#[derive(Clone, Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["text", "batch"]))]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One description
    #[arg(long)]
    pub text: Option<String>,
    /// File with one description per line
    #[arg(long)]
    pub batch: Option<PathBuf>,
    /// Prediction records for `--batch`; standard output when absent
    #[arg(long, requires = "batch")]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
}

/// Runs one parsed command, writing its summary to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Prepare(a) => commands::prepare(a, out).map(drop),
        Command::Train(a) => commands::train(a, out).map(drop),
        Command::Evaluate(a) => commands::evaluate(a, out).map(drop),
        Command::Predict(a) => commands::predict(a, out).map(drop),
    }
}
