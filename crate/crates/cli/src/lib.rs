//! The `cauliflow` command-line tool.
//!
//! Every subcommand resolves its configuration from defaults, an optional
//! `--config` file (TOML, JSON, or a previous run's `manifest.json`) and
//! flags, in that order of increasing priority. The resolved configuration
//! is written to `manifest.json` next to the outputs, and feeding that file
//! back through `--config` reproduces the run bit for bit.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod config;
pub mod data;

pub use config::{Manifest, RunConfig};

/// Process exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const SELFTEST_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const MISSING_INPUT: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const RUNTIME: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("selftest failed: {0} check(s) out of tolerance")]
    SelftestFailed(usize),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::MissingInput { .. } => exit::MISSING_INPUT,
            CliError::Config(_) => exit::CONFIG,
            CliError::Runtime(_) => exit::RUNTIME,
            CliError::SelftestFailed(_) => exit::SELFTEST_FAILED,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub(crate) fn missing(path: impl Into<PathBuf>, hint: impl Into<String>) -> Self {
        CliError::MissingInput {
            path: path.into(),
            hint: hint.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "cauliflow", version, about = "Phoneme-duration models for non-attentive TTS")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with a known duration distribution.
    GenData(GenDataArgs),
    /// Train the L2 duration regressor (Dur).
    TrainDur(DurArgs),
    /// Train the word-level phrase-break classifier.
    TrainPhrasing(PhrasingArgs),
    /// Train the phrasing-conditioned duration regressor (Dur+P).
    TrainDurp(DurArgs),
    /// Train the conditional normalising-flow duration model.
    TrainFlow(FlowArgs),
    /// Predict durations for one split with a trained model.
    Predict(PredictArgs),
    /// Compare predicted against reference durations.
    Evaluate(EvaluateArgs),
    /// Sample a flow at several temperatures and evaluate each.
    SweepTemperature(SweepTemperatureArgs),
    /// Sweep the speech-rate or pause-rate control of a flow.
    SweepRate(SweepRateArgs),
    /// Run the invariant suites and exit nonzero on any failure.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Config file (TOML, JSON or a run manifest); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed for every random stream of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Generator spec (TOML); defaults to the built-in spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub dev: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Data directory written by gen-data, or a bare corpus directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Pause threshold in frames.
    #[arg(long)]
    pub pause_threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DurArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PhrasingArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Number of flow steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Tokens per squeezed row.
    #[arg(long)]
    pub group: Option<usize>,
    #[arg(long)]
    pub cond_channels: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub encoder_dim: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Model raw frame counts instead of ln(1 + d).
    #[arg(long)]
    pub linear_domain: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of a trained model (flow, dur or durp).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Phrasing classifier directory, needed by Dur+P.
    #[arg(long)]
    pub phrasing: Option<PathBuf>,
    /// train, dev, test or all.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub temperature: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rs: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rp: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Reference data directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Predicted utterances file, or a directory holding one.
    #[arg(long)]
    pub predicted: Option<PathBuf>,
    #[arg(long)]
    pub pause_threshold: Option<f64>,
    #[arg(long)]
    pub percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepTemperatureArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated temperatures.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[arg(long)]
    pub percentile: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepRateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<String>,
    /// rs or rp.
    #[arg(long)]
    pub control: Option<String>,
    /// Comma-separated control values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub values: Option<Vec<f64>>,
    #[arg(long, allow_hyphen_values = true)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?;
    commands::dispatch(cli.command)
}

/// Runs and maps the outcome to an exit status, printing errors to stderr.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
