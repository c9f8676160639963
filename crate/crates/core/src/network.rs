//! Fully connected networks: He initialization, forward pass with retained
//! per-layer net inputs, and backpropagation of either the training loss or
//! the log output probability.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::exec::{chunk_bounds, Exec};
use crate::linalg::{axpy, matmul, matmul_transa_acc, matmul_transb, Matrix, Vector};

/// Rows per work item when a batch is split for gradient computation.
pub const GRAD_CHUNK: usize = 32;
/// Rows per work item for inference-only passes over whole datasets.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerActivation {
    Hidden(Activation),
    Linear,
    /// Row-wise softmax; only valid on the output layer of a cross-entropy network.
    Softmax,
}

impl fmt::Display for LayerActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerActivation::Hidden(a) => a.fmt(f),
            LayerActivation::Linear => f.write_str("linear"),
            LayerActivation::Softmax => f.write_str("softmax"),
        }
    }
}

impl FromStr for LayerActivation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(LayerActivation::Linear),
            "softmax" => Ok(LayerActivation::Softmax),
            other => other.parse().map(LayerActivation::Hidden),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    /// Softmax output, mean negative log-likelihood of the target class.
    SoftmaxCrossEntropy,
    /// Linear output, squared error averaged over output dimensions and
    /// the batch (the reconstruction error itself).
    MeanSquaredError,
}

impl Loss {
    pub fn output_activation(self) -> LayerActivation {
        match self {
            Loss::SoftmaxCrossEntropy => LayerActivation::Softmax,
            Loss::MeanSquaredError => LayerActivation::Linear,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// fan_out × fan_in
    pub weights: Matrix,
    pub bias: Vector,
    pub activation: LayerActivation,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vector, activation: LayerActivation) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::shape("Layer::new", weights.shape(), (bias.len(), 1)));
        }
        if !weights.is_finite() || !bias.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::Config("layer parameters must be finite".into()));
        }
        Ok(Layer { weights, bias, activation })
    }

    pub fn fan_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.rows()
    }

    /// Net inputs and activations for a batch of row inputs.
    fn forward(&self, input: &Matrix) -> (Matrix, Matrix) {
        let mut net = matmul_transb(input, &self.weights).expect("shapes checked by Network");
        for r in 0..net.rows() {
            for (v, b) in net.row_mut(r).iter_mut().zip(self.bias.as_slice()) {
                *v += b;
            }
        }
        let act = match self.activation {
            LayerActivation::Hidden(f) => Matrix::from_raw(
                net.rows(),
                net.cols(),
                net.as_slice().iter().map(|&x| f.apply(x)).collect(),
            ),
            LayerActivation::Linear => net.clone(),
            LayerActivation::Softmax => {
                let mut out = net.clone();
                for r in 0..out.rows() {
                    softmax_in_place(out.row_mut(r));
                }
                out
            }
        };
        (net, act)
    }

    /// Multiplies `delta` (gradient w.r.t. activations) by f'(net) in place.
    fn apply_derivative(&self, net: &Matrix, delta: &mut Matrix) {
        match self.activation {
            LayerActivation::Hidden(f) => {
                for (d, &x) in delta.as_mut_slice().iter_mut().zip(net.as_slice()) {
                    *d *= f.apply_derivative(x);
                }
            }
            LayerActivation::Linear => {}
            LayerActivation::Softmax => unreachable!("softmax is output-only"),
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Identifies unit `index` of `layer` (an index into [`Network::layers`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitRef {
    pub layer: usize,
    pub index: usize,
}

impl UnitRef {
    pub fn new(layer: usize, index: usize) -> Self {
        UnitRef { layer, index }
    }
}

impl FromStr for UnitRef {
    type Err = Error;
    /// `layer:index`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad unit `{s}`, expected layer:index"));
        let (l, i) = s.split_once(':').ok_or_else(bad)?;
        Ok(UnitRef {
            layer: l.trim().parse().map_err(|_| bad())?,
            index: i.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub input: Matrix,
    /// Per layer, batch × units.
    pub net_inputs: Vec<Matrix>,
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("network has at least one layer")
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// Activations feeding layer `layer` (the raw input for layer 0).
    pub fn incoming(&self, layer: usize) -> &Matrix {
        if layer == 0 {
            &self.input
        } else {
            &self.activations[layer - 1]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub d_weights: Matrix,
    pub d_bias: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    d_weights: Matrix::zeros(l.fan_out(), l.fan_in()),
                    d_bias: Vector::zeros(l.fan_out()),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, b.d_weights.as_slice(), a.d_weights.as_mut_slice());
            axpy(1.0, b.d_bias.as_slice(), a.d_bias.as_mut_slice());
        }
    }

    /// Index of the first layer holding a NaN or infinity.
    pub fn first_non_finite_layer(&self) -> Option<usize> {
        self.layers.iter().position(|g| {
            !g.d_weights.is_finite() || !g.d_bias.as_slice().iter().all(|v| v.is_finite())
        })
    }

    /// The gradient `(g, g₀)` of the weights entering one unit.
    pub fn unit(&self, unit: UnitRef) -> Result<(Vector, f64)> {
        let layer = self.layers.get(unit.layer).ok_or(Error::Index {
            what: "layer",
            index: unit.layer,
            len: self.layers.len(),
        })?;
        if unit.index >= layer.d_bias.len() {
            return Err(Error::Index {
                what: "unit",
                index: unit.index,
                len: layer.d_bias.len(),
            });
        }
        Ok((
            Vector::from_raw(layer.d_weights.row(unit.index).to_vec()),
            layer.d_bias[unit.index],
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub loss: Loss,
}

impl Network {
    /// Validates layer chaining and the output layer / loss pairing.
    pub fn new(layers: Vec<Layer>, loss: Loss) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::shape(
                    "Network::new",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
            if pair[0].activation == LayerActivation::Softmax {
                return Err(Error::Config(format!("softmax on hidden layer {i}")));
            }
        }
        let last = layers.last().unwrap().activation;
        if last != loss.output_activation() {
            return Err(Error::Config(format!(
                "output layer `{last}` does not match loss {loss:?}"
            )));
        }
        Ok(Network { layers, loss })
    }

    /// He-normal initialization: weights ~ N(0, sqrt(2 / fan_in)), zero biases.
    ///
    /// `sizes` lists every layer width including input and output, so
    /// `hidden.len()` must equal `sizes.len() - 2`. The output activation
    /// follows from `loss`.
    pub fn init_he(sizes: &[usize], hidden: &[Activation], loss: Loss, seed: u64) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config(format!(
                "need at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {sizes:?}")));
        }
        if hidden.len() != sizes.len() - 2 {
            return Err(Error::Config(format!(
                "{} hidden activations for {} hidden layers",
                hidden.len(),
                sizes.len() - 2
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            let activation = match hidden.get(i) {
                Some(&a) => LayerActivation::Hidden(a),
                None => loss.output_activation(),
            };
            layers.push(Layer {
                weights: Matrix::from_raw(fan_out, fan_in, data),
                bias: Vector::zeros(fan_out),
                activation,
            });
        }
        Network::new(layers, loss)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    /// Widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    /// Total number of units in the layers before the output layer.
    pub fn hidden_units(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(Layer::fan_out).sum()
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("forward", inputs.shape(), self.layers[0].weights.shape()));
        }
        let mut net_inputs = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (net, act) = layer.forward(activations.last().unwrap_or(inputs));
            net_inputs.push(net);
            activations.push(act);
        }
        Ok(ForwardTrace {
            input: inputs.clone(),
            net_inputs,
            activations,
        })
    }

    /// Output only, computed in chunks so large datasets do not materialize
    /// every hidden layer at once.
    pub fn predict(&self, inputs: &Matrix, exec: Exec) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("predict", inputs.shape(), self.layers[0].weights.shape()));
        }
        let parts = exec.map(&chunk_bounds(inputs.rows(), EVAL_CHUNK), |&(s, e)| {
            let mut cur = inputs.row_range(s, e);
            for layer in &self.layers {
                cur = layer.forward(&cur).1;
            }
            cur
        });
        let mut data = Vec::with_capacity(inputs.rows() * self.output_dim());
        for p in parts {
            data.extend(p.into_vec());
        }
        Ok(Matrix::from_raw(inputs.rows(), self.output_dim(), data))
    }

    /// Mean loss of `output` against `targets` (one-hot rows for cross-entropy).
    pub fn loss_value(&self, output: &Matrix, targets: &Matrix) -> Result<f64> {
        Ok(self.loss_sum(output, targets)? / output.rows() as f64)
    }

    fn loss_sum(&self, output: &Matrix, targets: &Matrix) -> Result<f64> {
        if output.shape() != targets.shape() {
            return Err(Error::shape("loss", output.shape(), targets.shape()));
        }
        let mut total = 0.0;
        for r in 0..output.rows() {
            let (o, t) = (output.row(r), targets.row(r));
            total += match self.loss {
                Loss::SoftmaxCrossEntropy => o
                    .iter()
                    .zip(t)
                    .filter(|(_, &ti)| ti != 0.0)
                    .map(|(&p, &ti)| -ti * p.max(f64::MIN_POSITIVE).ln())
                    .sum::<f64>(),
                Loss::MeanSquaredError => {
                    o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / o.len() as f64
                }
            };
        }
        Ok(total)
    }

    /// Exact gradient of the mean batch loss.
    pub fn backprop_loss(&self, trace: &ForwardTrace, targets: &Matrix) -> Result<Gradients> {
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_loss_gradient(trace, targets, 1.0 / trace.batch_size() as f64, &mut grads)?;
        Ok(grads)
    }

    fn accumulate_loss_gradient(
        &self,
        trace: &ForwardTrace,
        targets: &Matrix,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_trace(trace)?;
        let output = trace.output();
        if targets.shape() != output.shape() {
            return Err(Error::shape("backprop_loss", output.shape(), targets.shape()));
        }
        // dL/dnet at the output: softmax+CE gives (p - t), squared error 2(y - t)/dim.
        let factor = match self.loss {
            Loss::SoftmaxCrossEntropy => scale,
            Loss::MeanSquaredError => 2.0 * scale / output.cols() as f64,
        };
        let delta = Matrix::from_raw(
            output.rows(),
            output.cols(),
            output
                .as_slice()
                .iter()
                .zip(targets.as_slice())
                .map(|(o, t)| factor * (o - t))
                .collect(),
        );
        self.backpropagate(trace, delta, 0, |layer, delta| {
            let g = &mut grads.layers[layer];
            matmul_transa_acc(delta, trace.incoming(layer), &mut g.d_weights)
                .expect("trace shapes checked");
            for r in 0..delta.rows() {
                axpy(1.0, delta.row(r), g.d_bias.as_mut_slice());
            }
        });
        Ok(())
    }

    /// Walks `delta` (w.r.t. the output net inputs) back to layer `stop`,
    /// calling `visit(layer, delta_at_layer_net)` from the top down.
    fn backpropagate(
        &self,
        trace: &ForwardTrace,
        mut delta: Matrix,
        stop: usize,
        mut visit: impl FnMut(usize, &Matrix),
    ) {
        let top = self.layers.len() - 1;
        for l in (stop..=top).rev() {
            visit(l, &delta);
            if l > stop {
                let mut below = matmul(&delta, &self.layers[l].weights).expect("trace shapes checked");
                self.layers[l - 1].apply_derivative(&trace.net_inputs[l - 1], &mut below);
                delta = below;
            }
        }
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.net_inputs.len() == self.layers.len()
            && trace.activations.len() == self.layers.len()
            && trace.input.cols() == self.input_dim()
            && trace
                .net_inputs
                .iter()
                .zip(&self.layers)
                .all(|(m, l)| m.cols() == l.fan_out() && m.rows() == trace.batch_size());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("forward trace was not produced by this network".into()))
        }
    }

    /// Mean loss gradient over a batch, computed in fixed row chunks that may
    /// run in parallel. Chunk results are summed in order, so the result does
    /// not depend on `exec`. Also returns the mean loss.
    pub fn batch_gradient(&self, inputs: &Matrix, targets: &Matrix, exec: Exec) -> Result<(Gradients, f64)> {
        if inputs.rows() != targets.rows() {
            return Err(Error::shape("batch_gradient", inputs.shape(), targets.shape()));
        }
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let scale = 1.0 / n as f64;
        let parts = exec.map(&chunk_bounds(n, GRAD_CHUNK), |&(s, e)| -> Result<(Gradients, f64)> {
            let x = inputs.row_range(s, e);
            let t = targets.row_range(s, e);
            let trace = self.forward(&x)?;
            let mut g = Gradients::zeros_like(self);
            self.accumulate_loss_gradient(&trace, &t, scale, &mut g)?;
            Ok((g, self.loss_sum(trace.output(), &t)?))
        });
        let mut total = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for part in parts {
            let (g, l) = part?;
            total.add_assign(&g);
            loss += l;
        }
        Ok((total, loss * scale))
    }

    /// Per-example δ = ∂ ln p(y | z) / ∂ net for one unit.
    pub fn backprop_logprob_delta(&self, trace: &ForwardTrace, labels: &[usize], unit: UnitRef) -> Result<Vector> {
        self.check_unit(unit)?;
        let deltas = self.logprob_deltas_from(trace, labels, unit.layer)?;
        Ok(deltas[unit.layer].column(unit.index))
    }

    /// δ matrices (batch × units) for every layer from `stop` to the output;
    /// entries below `stop` are empty.
    pub fn logprob_deltas_from(&self, trace: &ForwardTrace, labels: &[usize], stop: usize) -> Result<Vec<Matrix>> {
        if self.loss != Loss::SoftmaxCrossEntropy {
            return Err(Error::Config("log-probability deltas need a softmax output".into()));
        }
        self.check_trace(trace)?;
        if labels.len() != trace.batch_size() {
            return Err(Error::shape("logprob_delta", trace.output().shape(), (labels.len(), 1)));
        }
        let classes = self.output_dim();
        let output = trace.output();
        let mut delta = output.scale(-1.0);
        for (r, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Index { what: "label", index: y, len: classes });
            }
            delta[(r, y)] += 1.0;
        }
        let mut out = vec![Matrix::zeros(0, 0); self.layers.len()];
        self.backpropagate(trace, delta, stop, |l, d| out[l] = d.clone());
        Ok(out)
    }

    pub fn check_unit(&self, unit: UnitRef) -> Result<()> {
        let layer = self.layers.get(unit.layer).ok_or(Error::Index {
            what: "layer",
            index: unit.layer,
            len: self.layers.len(),
        })?;
        if unit.index >= layer.fan_out() {
            return Err(Error::Index { what: "unit", index: unit.index, len: layer.fan_out() });
        }
        Ok(())
    }

    /// Hidden activations (every layer except the output) for a batch, in
    /// chunks, as one matrix per hidden layer.
    pub fn hidden_activations(&self, inputs: &Matrix, exec: Exec) -> Result<Vec<Matrix>> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("hidden_activations", inputs.shape(), self.layers[0].weights.shape()));
        }
        let hidden = &self.layers[..self.layers.len() - 1];
        let parts = exec.map(&chunk_bounds(inputs.rows(), EVAL_CHUNK), |&(s, e)| {
            let mut cur = inputs.row_range(s, e);
            let mut acts = Vec::with_capacity(hidden.len());
            for layer in hidden {
                cur = layer.forward(&cur).1;
                acts.push(cur.clone());
            }
            acts
        });
        let mut out: Vec<Vec<f64>> = hidden.iter().map(|l| Vec::with_capacity(inputs.rows() * l.fan_out())).collect();
        for part in parts {
            for (dst, m) in out.iter_mut().zip(part) {
                dst.extend(m.into_vec());
            }
        }
        Ok(out
            .into_iter()
            .zip(hidden)
            .map(|(d, l)| Matrix::from_raw(inputs.rows(), l.fan_out(), d))
            .collect())
    }
}

/// One-hot encoding of class labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Index { what: "label", index: y, len: classes });
        }
        m[(r, y)] = 1.0;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn elu() -> Activation {
        Activation::Elu { alpha: 1.0 }
    }

    fn random_inputs(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::init_he(&[784, 128, 10], &[elu()], Loss::SoftmaxCrossEntropy, 7).unwrap();
        let b = Network::init_he(&[784, 128, 10], &[elu()], Loss::SoftmaxCrossEntropy, 7).unwrap();
        let bytes = |n: &Network| -> Vec<u64> {
            n.layers.iter().flat_map(|l| l.weights.as_slice().iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
        let c = Network::init_he(&[784, 128, 10], &[elu()], Loss::SoftmaxCrossEntropy, 8).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn he_std_matches_fan_in() {
        let net = Network::init_he(&[200, 128, 2], &[elu()], Loss::SoftmaxCrossEntropy, 1).unwrap();
        let w = net.layers[0].weights.as_slice();
        assert_eq!(w.len(), 25600);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (w.len() - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.01, "std {}", var.sqrt());
        assert!(net.layers.iter().all(|l| l.bias.as_slice().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_rejects_bad_sizes() {
        assert!(matches!(
            Network::init_he(&[4], &[], Loss::SoftmaxCrossEntropy, 0),
            Err(Error::Config(_))
        ));
        assert!(Network::init_he(&[], &[], Loss::SoftmaxCrossEntropy, 0).is_err());
        assert!(Network::init_he(&[4, 3, 2], &[], Loss::SoftmaxCrossEntropy, 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut net = Network::init_he(&[5, 4, 3], &[elu()], Loss::SoftmaxCrossEntropy, 0).unwrap();
        for l in &mut net.layers {
            l.weights = Matrix::zeros(l.fan_out(), l.fan_in());
        }
        let trace = net.forward(&random_inputs(6, 5, 1)).unwrap();
        assert!(trace.activations[0].as_slice().iter().all(|&a| a == 0.0));
        for r in 0..6 {
            for &p in trace.output().row(r) {
                assert!((p - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let layer = Layer::new(Matrix::identity(4), Vector::zeros(4), LayerActivation::Linear).unwrap();
        let net = Network::new(vec![layer], Loss::MeanSquaredError).unwrap();
        let x = random_inputs(3, 4, 2);
        assert_eq!(net.forward(&x).unwrap().output(), &x);
    }

    #[test]
    fn forward_matches_scalar_loops() {
        let net = Network::init_he(&[3, 4, 2], &[elu()], Loss::SoftmaxCrossEntropy, 9).unwrap();
        let x = random_inputs(2, 3, 4);
        let trace = net.forward(&x).unwrap();
        for n in 0..2 {
            let mut hidden = [0.0; 4];
            for (i, h) in hidden.iter_mut().enumerate() {
                let mut s = net.layers[0].bias[i];
                for j in 0..3 {
                    s += net.layers[0].weights[(i, j)] * x[(n, j)];
                }
                *h = if s > 0.0 { s } else { s.exp() - 1.0 };
            }
            let mut logits = [0.0; 2];
            for (k, z) in logits.iter_mut().enumerate() {
                let mut s = net.layers[1].bias[k];
                for (i, h) in hidden.iter().enumerate() {
                    s += net.layers[1].weights[(k, i)] * h;
                }
                *z = s;
            }
            let m = logits[0].max(logits[1]);
            let denom = (logits[0] - m).exp() + (logits[1] - m).exp();
            for k in 0..2 {
                let p = (logits[k] - m).exp() / denom;
                assert!((trace.output()[(n, k)] - p).abs() < 1e-12);
            }
            for i in 0..4 {
                assert!((trace.activations[0][(n, i)] - hidden[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let net = Network::init_he(&[6, 8, 8, 5], &[elu(), Activation::Relu], Loss::SoftmaxCrossEntropy, 3).unwrap();
        let out = net.forward(&random_inputs(10, 6, 3).scale(20.0)).unwrap();
        for r in 0..10 {
            assert!((out.output().row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_gradient_vanishes_at_exact_fit() {
        let net = Network::init_he(&[3, 5, 2], &[elu()], Loss::MeanSquaredError, 5).unwrap();
        let x = random_inputs(4, 3, 6);
        let trace = net.forward(&x).unwrap();
        let targets = trace.output().clone();
        let g = net.backprop_loss(&trace, &targets).unwrap();
        for lg in &g.layers {
            assert_eq!(lg.d_weights.max_abs(), 0.0);
            assert_eq!(lg.d_bias.max_abs(), 0.0);
        }
    }

    #[test]
    fn cross_entropy_output_bias_gradient_is_mean_residual() {
        let net = Network::init_he(&[3, 4, 3], &[elu()], Loss::SoftmaxCrossEntropy, 2).unwrap();
        let x = random_inputs(5, 3, 7);
        let labels = [0, 2, 1, 1, 0];
        let t = one_hot(&labels, 3).unwrap();
        let trace = net.forward(&x).unwrap();
        let g = net.backprop_loss(&trace, &t).unwrap();
        for k in 0..3 {
            let expect: f64 = (0..5).map(|n| (trace.output()[(n, k)] - t[(n, k)]) / 5.0).sum();
            assert!((g.layers[1].d_bias[k] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn chunked_gradient_equals_single_pass() {
        let net = Network::init_he(&[7, 9, 6, 3], &[elu(), Activation::ShiftedRelu], Loss::SoftmaxCrossEntropy, 4).unwrap();
        let x = random_inputs(53, 7, 8);
        let labels: Vec<usize> = (0..53).map(|i| i % 3).collect();
        let t = one_hot(&labels, 3).unwrap();
        let full = net.backprop_loss(&net.forward(&x).unwrap(), &t).unwrap();
        let (seq, loss_seq) = net.batch_gradient(&x, &t, Exec::Sequential).unwrap();
        let (par, loss_par) = net.batch_gradient(&x, &t, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        assert_eq!(loss_seq.to_bits(), loss_par.to_bits());
        for (a, b) in full.layers.iter().zip(&seq.layers) {
            assert!(a.d_weights.max_abs_diff(&b.d_weights) < 1e-14);
        }
        let direct = net.loss_value(net.forward(&x).unwrap().output(), &t).unwrap();
        assert!((direct - loss_seq).abs() < 1e-13);
    }

    #[test]
    fn output_delta_is_indicator_minus_softmax() {
        let net = Network::init_he(&[4, 6, 3], &[elu()], Loss::SoftmaxCrossEntropy, 1).unwrap();
        let x = random_inputs(1, 4, 3);
        let trace = net.forward(&x).unwrap();
        for i in 0..3 {
            let d = net.backprop_logprob_delta(&trace, &[2], UnitRef::new(1, i)).unwrap();
            let expect = if i == 2 { 1.0 } else { 0.0 } - trace.output()[(0, i)];
            assert_eq!(d[0], expect);
        }
    }

    #[test]
    fn hidden_delta_vanishes_without_downstream_path() {
        let mut net = Network::init_he(&[4, 6, 5, 3], &[elu(), elu()], Loss::SoftmaxCrossEntropy, 1).unwrap();
        net.layers[2].weights = Matrix::zeros(3, 5);
        let trace = net.forward(&random_inputs(4, 4, 1)).unwrap();
        for layer in 0..2 {
            let d = net.backprop_logprob_delta(&trace, &[0, 1, 2, 0], UnitRef::new(layer, 1)).unwrap();
            assert_eq!(d.max_abs(), 0.0);
        }
    }

    #[test]
    fn logprob_delta_rejects_bad_units() {
        let net = Network::init_he(&[4, 6, 3], &[elu()], Loss::SoftmaxCrossEntropy, 1).unwrap();
        let trace = net.forward(&random_inputs(1, 4, 3)).unwrap();
        assert!(matches!(
            net.backprop_logprob_delta(&trace, &[0], UnitRef::new(2, 0)),
            Err(Error::Index { what: "layer", .. })
        ));
        assert!(matches!(
            net.backprop_logprob_delta(&trace, &[0], UnitRef::new(0, 6)),
            Err(Error::Index { what: "unit", .. })
        ));
    }

    #[test]
    fn predict_matches_forward() {
        let net = Network::init_he(&[5, 7, 4], &[Activation::Relu], Loss::SoftmaxCrossEntropy, 2).unwrap();
        let x = random_inputs(600, 5, 9);
        let a = net.predict(&x, Exec::Parallel).unwrap();
        assert_eq!(&a, net.forward(&x).unwrap().output());
        let hidden = net.hidden_activations(&x, Exec::Sequential).unwrap();
        assert_eq!(hidden[0], net.forward(&x).unwrap().activations[0]);
    }

    #[test]
    fn unit_ref_parses() {
        assert_eq!("2:17".parse::<UnitRef>().unwrap(), UnitRef::new(2, 17));
        assert!("2".parse::<UnitRef>().is_err());
    }
}
