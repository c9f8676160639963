//! The MNIST experiments as library calls, shared by the CLI and the
//! acceptance tests.

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::data::{Dataset, MNIST_CLASSES};
use crate::diagnostics::{reconstruction_error, ActivationTrace, MedianTracker};
use crate::error::Result;
use crate::exec::Exec;
use crate::io::{fmt_f64, Csv};
use crate::network::{Loss, Network};
use crate::optimizer::{train, EpochHook, EpochMetrics, TrainConfig};

/// Eight hidden layers of 128 units.
pub const CLASSIFIER_HIDDEN: [usize; 8] = [128; 8];
/// Five hidden layers of 256 units, for the median-variance study.
pub const VARIANCE_HIDDEN: [usize; 5] = [256; 5];
/// Encoder 1000-500-250-30 and its mirror image.
pub const AUTOENCODER_HIDDEN: [usize; 7] = [1000, 500, 250, 30, 250, 500, 1000];
pub const AUTOENCODER_LEARNING_RATES: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];

pub const CLASSIFIER_EPOCHS: usize = 20;
pub const AUTOENCODER_EPOCHS: usize = 50;

fn sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = Vec::with_capacity(hidden.len() + 2);
    s.push(input);
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierExperiment {
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl ClassifierExperiment {
    pub fn new(activation: Activation) -> Self {
        ClassifierExperiment {
            activation,
            hidden: CLASSIFIER_HIDDEN.to_vec(),
            train: TrainConfig { epochs: CLASSIFIER_EPOCHS, ..TrainConfig::default() },
        }
    }

    /// He-initialized network for `seed`. Initial weights depend only on
    /// the sizes and the seed, so runs with different activations start
    /// from the same weights.
    pub fn network(&self, input: usize, seed: u64) -> Result<Network> {
        let acts = vec![self.activation; self.hidden.len()];
        Network::init_he(&sizes(input, &self.hidden, MNIST_CLASSES), &acts, Loss::SoftmaxCrossEntropy, seed)
    }
}

pub struct ClassifierOutcome {
    pub net: Network,
    pub metrics: Vec<EpochMetrics>,
    /// Per-epoch unit medians on the probe set.
    pub trace: ActivationTrace,
}

/// Trains one classifier, recording unit medians on `probe` after every
/// epoch. The seed drives both initialization and shuffling.
pub fn run_classifier(
    exp: &ClassifierExperiment,
    seed: u64,
    train_set: &Dataset,
    eval_set: &Dataset,
    probe: &Dataset,
) -> Result<ClassifierOutcome> {
    let net = exp.network(train_set.dim(), seed)?;
    let cfg = TrainConfig { shuffle_seed: seed, ..exp.train.clone() };
    let mut tracker = MedianTracker::new(&net, probe.inputs.clone(), cfg.exec);
    let (net, metrics) = train(net, train_set, eval_set, &cfg, &mut [&mut tracker])?;
    Ok(ClassifierOutcome { net, metrics, trace: tracker.trace })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionPoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
}

pub fn reconstruction_csv(points: &[ReconstructionPoint]) -> Csv {
    let mut csv = Csv::new(["epoch", "train_mse", "test_mse"]);
    for p in points {
        csv.push(vec![p.epoch.to_string(), fmt_f64(p.train_mse), fmt_f64(p.test_mse)]);
    }
    csv
}

struct ReconstructionHook<'a> {
    train: &'a Dataset,
    test: &'a Dataset,
    exec: Exec,
    every: usize,
    last: usize,
    points: Vec<ReconstructionPoint>,
}

impl EpochHook for ReconstructionHook<'_> {
    fn after_epoch(&mut self, epoch: usize, net: &Network) -> Result<Option<f64>> {
        if epoch % self.every != 0 && epoch != self.last {
            return Ok(None);
        }
        self.points.push(ReconstructionPoint {
            epoch,
            train_mse: reconstruction_error(net, self.train, self.exec)?,
            test_mse: reconstruction_error(net, self.test, self.exec)?,
        });
        Ok(None)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderExperiment {
    pub activation: Activation,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl AutoencoderExperiment {
    pub fn new(activation: Activation, learning_rate: f64) -> Self {
        AutoencoderExperiment {
            activation,
            hidden: AUTOENCODER_HIDDEN.to_vec(),
            train: TrainConfig { learning_rate, epochs: AUTOENCODER_EPOCHS, ..TrainConfig::default() },
        }
    }

    pub fn network(&self, input: usize, seed: u64) -> Result<Network> {
        let acts = vec![self.activation; self.hidden.len()];
        Network::init_he(&sizes(input, &self.hidden, input), &acts, Loss::MeanSquaredError, seed)
    }
}

pub struct AutoencoderOutcome {
    pub net: Network,
    pub points: Vec<ReconstructionPoint>,
}

/// Trains one autoencoder and records train/test reconstruction error
/// (mean over examples and pixels) every `train.log_every` epochs and
/// after the last one.
pub fn run_autoencoder(exp: &AutoencoderExperiment, seed: u64, train_set: &Dataset, test_set: &Dataset) -> Result<AutoencoderOutcome> {
    let net = exp.network(train_set.dim(), seed)?;
    let cfg = TrainConfig { shuffle_seed: seed, log_every: exp.train.epochs, ..exp.train.clone() };
    let unlabelled = |d: &Dataset| Dataset { labels: None, ..d.clone() };
    let (train_set, test_set) = (unlabelled(train_set), unlabelled(test_set));
    let mut hook = ReconstructionHook {
        train: &train_set,
        test: &test_set,
        exec: cfg.exec,
        every: exp.train.log_every,
        last: cfg.epochs,
        points: Vec::new(),
    };
    let (net, _) = train(net, &train_set, &test_set.head(0), &cfg, &mut [&mut hook])?;
    Ok(AutoencoderOutcome { net, points: hook.points })
}
