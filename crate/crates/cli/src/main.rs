//! `elulab`: runs the MNIST experiments and the Fisher / lemma checks.
//!
//! Exit codes: 0 success, 1 run failure (including failed identity checks),
//! 2 usage error or missing input file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::TrainArgs;

#[derive(Debug)]
pub struct UsageError(pub String);

/// Outcome of a command that did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Run(String),
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<elulab::Error> for Failure {
    fn from(e: elulab::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "elulab", version, about = "ELU network experiments and unit natural-gradient checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train MNIST classifiers (default 8×128) and track unit medians
    Train(TrainArgs),
    /// Train the 1000-500-250-30 MNIST autoencoder at one or more learning rates
    Autoencoder(TrainArgs),
    /// Train a classifier (default 5×256) and record per-epoch unit medians
    /// on the whole training set, with their variance across epochs
    Trace(TrainArgs),
    /// Estimate unit Fisher matrices of a saved network and report bias shifts
    NatgradCheck(NatgradArgs),
    /// Randomized block-inverse and Sherman–Morrison checks
    LemmaCheck(LemmaArgs),
}

#[derive(Args, Debug, Clone)]
pub struct NatgradArgs {
    /// Network file written by `train`
    #[arg(long)]
    pub network: PathBuf,
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Units as layer:index, comma separated (default: first 8 units of every
    /// hidden layer above the first)
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<String>>,
    /// Training examples used for the estimate
    #[arg(long, default_value_t = elulab::fisher::DEFAULT_FISHER_SAMPLES)]
    pub samples: usize,
    /// observed (empirical Fisher) or sampled (labels drawn from the model)
    #[arg(long)]
    pub delta_mode: Option<String>,
    /// Labels drawn per example with --delta-mode sampled
    #[arg(long, default_value_t = 1)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON output file
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct LemmaArgs {
    #[arg(long)]
    pub cases: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub sequential: bool,
    #[arg(long, hide = true)]
    pub corrupt_inverse: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Autoencoder(a) => commands::autoencoder(a),
        Command::Trace(a) => commands::trace(a),
        Command::NatgradCheck(a) => commands::natgrad_check(a),
        Command::LemmaCheck(a) => commands::lemma_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
