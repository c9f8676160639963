//! Flag / config-file / default resolution. A flag always wins over the
//! JSON config file, which wins over the built-in defaults.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use elulab::data::{split, Dataset, MnistDir};
use elulab::fisher::DeltaMode;
use elulab::{Activation, Exec, TrainConfig};

use crate::UsageError;

pub const MNIST_ENV: &str = "ELULAB_MNIST_DIR";
pub const DEFAULT_MNIST_DIR: &str = "data/mnist";
/// Held-out share of the MNIST training set, split with seed 0.
pub const VALIDATION_FRACTION: f64 = 1.0 / 6.0;

/// One value or a list, so a config file may say `"lr": 0.01` or
/// `"lr": [0.01, 0.001]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }
}

/// Keys of the `--config` JSON file; all optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub activation: Option<String>,
    pub alpha: Option<f64>,
    pub lr: Option<OneOrMany<f64>>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seeds: Option<OneOrMany<u64>>,
    pub mnist_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub delta_mode: Option<String>,
    pub cases: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub log_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))
    }
}

/// Flags shared by the training commands.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainArgs {
    /// elu, relu, lrelu or srelu, optionally with `:alpha`
    #[arg(long)]
    pub activation: Option<String>,
    /// α for elu / lrelu
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Learning rate(s), comma separated
    #[arg(long, value_delimiter = ',')]
    pub lr: Option<Vec<f64>>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seeds, comma separated; each gets its own output directory
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the above (kebab-case keys)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hidden layer widths, comma separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Use only the first N training examples
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N evaluation examples
    #[arg(long)]
    pub eval_limit: Option<usize>,
    /// Record loss metrics every N epochs (and after the last)
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Run on one thread
    #[arg(long)]
    pub sequential: bool,
}

/// Fully resolved settings for one command invocation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub activation: Activation,
    pub learning_rates: Vec<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub mnist_dir: PathBuf,
    pub out: PathBuf,
    pub hidden: Vec<usize>,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub log_every: usize,
    pub exec: Exec,
}

pub struct Defaults {
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub out: &'static str,
}

pub fn parse_activation(name: &str, alpha: Option<f64>) -> Result<Activation, UsageError> {
    let act: Activation = name.parse().map_err(|e| UsageError(format!("{e}")))?;
    match alpha {
        Some(_) if matches!(act, Activation::Relu | Activation::ShiftedRelu) => {
            Err(UsageError(format!("--alpha does not apply to `{}`", act.name())))
        }
        Some(a) => act.with_alpha(a).map_err(|e| UsageError(format!("{e}"))),
        None => Ok(act),
    }
}

pub fn mnist_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR))
}

impl TrainArgs {
    pub fn resolve(self, defaults: Defaults) -> Result<RunConfig, UsageError> {
        let file = match &self.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let activation = parse_activation(
            self.activation.as_deref().or(file.activation.as_deref()).unwrap_or("elu"),
            self.alpha.or(file.alpha),
        )?;
        let cfg = RunConfig {
            activation,
            learning_rates: self.lr.or(file.lr.map(OneOrMany::into_vec)).unwrap_or(defaults.learning_rates),
            momentum: self.momentum.or(file.momentum).unwrap_or(0.0),
            batch_size: self.batch_size.or(file.batch_size).unwrap_or(64),
            epochs: self.epochs.or(file.epochs).unwrap_or(defaults.epochs),
            seeds: self.seeds.or(file.seeds.map(OneOrMany::into_vec)).unwrap_or_else(|| vec![0]),
            mnist_dir: mnist_dir(self.mnist_dir, file.mnist_dir),
            out: self.out.or(file.out).unwrap_or_else(|| PathBuf::from(defaults.out)),
            hidden: self.hidden.or(file.hidden).unwrap_or(defaults.hidden),
            train_limit: self.train_limit.or(file.train_limit),
            eval_limit: self.eval_limit.or(file.eval_limit),
            log_every: self.log_every.or(file.log_every).unwrap_or(1),
            exec: if self.sequential { Exec::Sequential } else { Exec::default() },
        };
        if cfg.seeds.is_empty() || cfg.learning_rates.is_empty() || cfg.hidden.is_empty() {
            return Err(UsageError("seeds, learning rates and hidden sizes must be non-empty".into()));
        }
        for lr in &cfg.learning_rates {
            cfg.train_config(*lr, 0).validate().map_err(|e| UsageError(e.to_string()))?;
        }
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn train_config(&self, learning_rate: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            shuffle_seed: seed,
            log_every: self.log_every,
            exec: self.exec,
        }
    }

    /// (training split, held-out split, test set), each truncated to the
    /// configured limits.
    pub fn mnist(&self) -> elulab::Result<(Dataset, Dataset, Dataset)> {
        let dir = MnistDir(self.mnist_dir.clone());
        let (train, val) = split(&dir.train()?, VALIDATION_FRACTION, 0)?;
        let test = dir.test()?;
        let limit = |d: Dataset, n: Option<usize>| match n {
            Some(n) => d.head(n),
            None => d,
        };
        Ok((
            limit(train, self.train_limit),
            limit(val, self.eval_limit),
            limit(test, self.eval_limit),
        ))
    }
}

pub fn parse_delta_mode(s: &str) -> Result<DeltaMode, UsageError> {
    s.parse().map_err(|e: elulab::Error| UsageError(e.to_string()))
}
