//! Mini-batch SGD with optional momentum and the epoch loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{fmt_f64, fmt_opt, Csv};
use crate::linalg::Matrix;
use crate::network::{Gradients, Loss, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle_seed: u64,
    /// Metrics are recorded every `log_every` epochs and after the last one.
    pub log_every: usize,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            batch_size: 64,
            epochs: 20,
            shuffle_seed: 0,
            log_every: 1,
            exec: Exec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size, epochs and log_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    /// Eval-set accuracy for classifiers.
    pub accuracy: Option<f64>,
    pub median_activation: Option<f64>,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> Csv {
    let mut csv = Csv::new(["epoch", "train_loss", "eval_loss", "accuracy", "median_activation"]);
    for m in metrics {
        csv.push(vec![
            m.epoch.to_string(),
            fmt_f64(m.train_loss),
            fmt_opt(m.eval_loss),
            fmt_opt(m.accuracy),
            fmt_opt(m.median_activation),
        ]);
    }
    csv
}

/// Velocity buffers, one per layer.
#[derive(Clone, Debug)]
pub struct MomentumState {
    velocity: Gradients,
}

impl MomentumState {
    pub fn new(net: &Network) -> Self {
        MomentumState { velocity: Gradients::zeros_like(net) }
    }
}

/// `v ← momentum·v − lr·g; w ← w + v`. Rejects non-finite gradients before
/// touching the network.
pub fn sgd_step(net: &mut Network, grads: &Gradients, state: &mut MomentumState, cfg: &TrainConfig) -> Result<()> {
    if let Some(layer) = grads.first_non_finite_layer() {
        return Err(Error::Divergence { layer, epoch: None, batch: None });
    }
    if grads.layers.len() != net.layers.len() {
        return Err(Error::shape("sgd_step", (grads.layers.len(), 0), (net.layers.len(), 0)));
    }
    for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut state.velocity.layers) {
        if g.d_weights.shape() != layer.weights.shape() {
            return Err(Error::shape("sgd_step", g.d_weights.shape(), layer.weights.shape()));
        }
        update(v.d_weights.as_mut_slice(), g.d_weights.as_slice(), layer.weights.as_mut_slice(), cfg);
        update(v.d_bias.as_mut_slice(), g.d_bias.as_slice(), layer.bias.as_mut_slice(), cfg);
    }
    Ok(())
}

#[inline]
fn update(velocity: &mut [f64], grad: &[f64], params: &mut [f64], cfg: &TrainConfig) {
    for ((v, &g), w) in velocity.iter_mut().zip(grad).zip(params.iter_mut()) {
        *v = cfg.momentum * *v - cfg.learning_rate * g;
        *w += *v;
    }
}

/// Called after every epoch with the current network. A returned value is
/// recorded as that epoch's `median_activation`.
pub trait EpochHook {
    fn after_epoch(&mut self, epoch: usize, net: &Network) -> Result<Option<f64>>;
}

/// Loss and (for classifiers) accuracy over a whole dataset.
pub fn evaluate(net: &Network, data: &Dataset, exec: Exec) -> Result<(f64, Option<f64>)> {
    let output = net.predict(&data.inputs, exec)?;
    let targets = targets_for(net, data)?;
    let loss = net.loss_value(&output, &targets)?;
    let accuracy = match net.loss {
        Loss::SoftmaxCrossEntropy => {
            let labels = data.labels()?;
            let hits = (0..output.rows()).filter(|&r| argmax(output.row(r)) == labels[r]).count();
            Some(hits as f64 / output.rows() as f64)
        }
        Loss::MeanSquaredError => None,
    };
    Ok((loss, accuracy))
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

fn targets_for(net: &Network, data: &Dataset) -> Result<Matrix> {
    match net.loss {
        Loss::SoftmaxCrossEntropy => data.targets(Some(net.output_dim())),
        Loss::MeanSquaredError => {
            if data.dim() != net.output_dim() {
                return Err(Error::shape("autoencoder targets", data.inputs.shape(), (0, net.output_dim())));
            }
            data.targets(None)
        }
    }
}

/// The shuffled example order for one epoch. Each epoch draws from its own
/// ChaCha stream keyed by `shuffle_seed`, so epochs are independent of how
/// many random numbers earlier epochs consumed.
pub fn epoch_order(n: usize, shuffle_seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Trains for `cfg.epochs` epochs. The last partial batch of every epoch is
/// used. `eval` may be empty, in which case no eval metrics are reported.
pub fn train(
    mut net: Network,
    data: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
    hooks: &mut [&mut dyn EpochHook],
) -> Result<(Network, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.dim() != net.input_dim() {
        return Err(Error::shape("train", data.inputs.shape(), net.layers[0].weights.shape()));
    }
    let targets = targets_for(&net, data)?;
    let mut state = MomentumState::new(&net);
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        let order = epoch_order(data.len(), cfg.shuffle_seed, epoch);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.inputs.select_rows(idx);
            let t = targets.select_rows(idx);
            let (grads, _) = net.batch_gradient(&x, &t, cfg.exec)?;
            sgd_step(&mut net, &grads, &mut state, cfg).map_err(|e| match e {
                Error::Divergence { layer, .. } => Error::Divergence { layer, epoch: Some(epoch), batch: Some(b) },
                other => other,
            })?;
        }
        let mut median = None;
        for hook in hooks.iter_mut() {
            if let Some(v) = hook.after_epoch(epoch, &net)? {
                median.get_or_insert(v);
            }
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            let (train_loss, _) = evaluate(&net, data, cfg.exec)?;
            let (eval_loss, accuracy) = if eval.is_empty() {
                (None, None)
            } else {
                let (l, a) = evaluate(&net, eval, cfg.exec)?;
                (Some(l), a)
            };
            if !train_loss.is_finite() {
                return Err(Error::Divergence { layer: net.layers.len() - 1, epoch: Some(epoch), batch: None });
            }
            metrics.push(EpochMetrics { epoch, train_loss, eval_loss, accuracy, median_activation: median });
        }
    }
    Ok((net, metrics))
}
