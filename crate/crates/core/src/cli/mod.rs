//! Command-line surface: `train`, `sample`, `sweep`, `quantise`, `eval`.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage or configuration error.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_eval, cmd_quantise, cmd_sample, cmd_sweep, cmd_train, SweepAxis, SweepRow, SWEEP_HEADER,
};
pub use config::{manifest, DatasetSpec, Ini, RunConfig};

use crate::error::Error;

pub const VERSION: &str = concat!("orderlab-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Parser)]
#[command(
    name = "orderlab",
    version,
    about = "Order-agnostic masked-diffusion generation with pluggable decoding orders"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write a checkpoint, loss trace and manifest.
    Train(RunArgs),
    /// Generate grids from a checkpoint.
    Sample(SampleArgs),
    /// Generate and score a grid of settings.
    Sweep(SweepArgs),
    /// Quantise a mel file and report the round-trip error.
    Quantise(QuantiseArgs),
    /// Score a checkpoint on held-out data.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `[run] seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `[run] out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValuesArg {
    Argmax,
    Sample,
}

#[derive(Debug, Clone, Args)]
pub struct StrategyArgs {
    /// default, l2r, r2l, beta[:X], top1, top1*, topk[:K], topk*[:K], duration.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Value mode for top-K strategies.
    #[arg(long, value_enum)]
    pub values: Option<ValuesArg>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub t2: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    /// Defaults to `checkpoint.bin` in the run directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    /// Write the grid after every step.
    #[arg(long)]
    pub dump_steps: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub axis: SweepAxis,
    /// Comma-separated axis values; each axis has defaults.
    #[arg(long = "axis-values", value_delimiter = ',')]
    pub axis_values: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Quantisation levels (the `q` axis ignores this).
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct QuantiseArgs {
    /// Binary mel file, or CSV with one row per bin.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub q: usize,
    /// Lower bound; defaults to the file's recorded bounds, else its minimum.
    #[arg(long)]
    pub a: Option<f64>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub strategy: StrategyArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(a) => cmd_train(&a)?,
        Command::Sample(a) => cmd_sample(&a)?,
        Command::Sweep(a) => cmd_sweep(&a)?,
        Command::Quantise(a) => cmd_quantise(&a)?,
        Command::Eval(a) => cmd_eval(&a)?,
    }
    Ok(())
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
