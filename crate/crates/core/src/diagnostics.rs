//! Hidden-unit activation statistics tracked during training, and the
//! autoencoder reconstruction error.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{fmt_f64, Csv};
use crate::linalg::{Matrix, Vector};
use crate::network::Network;
use crate::optimizer::EpochHook;

/// Examples in the fixed probe subset: the first `PROBE_SIZE` training
/// examples in dataset order.
pub const PROBE_SIZE: usize = 2048;

/// Median with the mean-of-middle-two convention for even counts.
/// Reorders `values`.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let n = values.len();
    let mid = n / 2;
    let (lower, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + m)
    }
}

/// Per-unit median and mean over the rows of each hidden-layer activation
/// matrix, concatenated layer by layer.
fn column_stats(acts: &[Matrix], exec: Exec) -> (Vec<f64>, Vec<f64>) {
    let columns: Vec<(usize, usize)> = acts
        .iter()
        .enumerate()
        .flat_map(|(l, m)| (0..m.cols()).map(move |c| (l, c)))
        .collect();
    let stats = exec.map(&columns, |&(l, c)| {
        let mut col = acts[l].column(c).into_vec();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        (median(&mut col), mean)
    });
    stats.into_iter().unzip()
}

fn hidden_stats(net: &Network, inputs: &Matrix, exec: Exec) -> Result<(Vec<f64>, Vec<f64>)> {
    if inputs.rows() == 0 {
        return Err(Error::Config("empty probe set".into()));
    }
    let acts = net.hidden_activations(inputs, exec)?;
    Ok(column_stats(&acts, exec))
}

/// Median activation of every hidden unit over `probe`, layer by layer.
pub fn unit_medians(net: &Network, probe: &Dataset, exec: Exec) -> Result<Vector> {
    Ok(Vector::from_raw(hidden_stats(net, &probe.inputs, exec)?.0))
}

/// Mean activation of every hidden unit over `probe`.
pub fn unit_means(net: &Network, probe: &Dataset, exec: Exec) -> Result<Vector> {
    Ok(Vector::from_raw(hidden_stats(net, &probe.inputs, exec)?.1))
}

/// Per-epoch, per-unit medians (and means) of hidden activations.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub epochs: Vec<usize>,
    /// epoch × total hidden units
    pub medians: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    /// Start of each hidden layer's units in a row, plus the total at the end.
    pub layer_offsets: Vec<usize>,
}

impl ActivationTrace {
    pub fn for_network(net: &Network) -> Self {
        let mut offsets = vec![0];
        for l in &net.layers[..net.layers.len() - 1] {
            offsets.push(offsets.last().unwrap() + l.fan_out());
        }
        ActivationTrace { epochs: Vec::new(), medians: Vec::new(), means: Vec::new(), layer_offsets: offsets }
    }

    pub fn units(&self) -> usize {
        *self.layer_offsets.last().unwrap_or(&0)
    }

    pub fn layers(&self) -> usize {
        self.layer_offsets.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn push(&mut self, epoch: usize, medians: Vec<f64>, means: Vec<f64>) -> Result<()> {
        if medians.len() != self.units() || means.len() != self.units() {
            return Err(Error::shape("ActivationTrace::push", (1, self.units()), (1, medians.len())));
        }
        if let Some(v) = medians.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "unit median", value: *v });
        }
        self.epochs.push(epoch);
        self.medians.push(medians);
        self.means.push(means);
        Ok(())
    }

    /// Computes and appends the statistics of `net` on `probe`.
    pub fn record(&mut self, epoch: usize, net: &Network, probe: &Matrix, exec: Exec) -> Result<()> {
        let (medians, means) = hidden_stats(net, probe, exec)?;
        self.push(epoch, medians, means)
    }

    pub fn unit_labels(&self) -> Vec<String> {
        (0..self.layers())
            .flat_map(|l| (0..self.layer_offsets[l + 1] - self.layer_offsets[l]).map(move |i| format!("u{l}_{i}")))
            .collect()
    }

    /// `epoch,u0_0,u0_1,…` with one row of medians per epoch.
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(std::iter::once("epoch".to_string()).chain(self.unit_labels()));
        for (e, row) in self.epochs.iter().zip(&self.medians) {
            csv.push(std::iter::once(e.to_string()).chain(row.iter().map(|&v| fmt_f64(v))).collect());
        }
        csv
    }

    /// Inverse of [`to_csv`](Self::to_csv). Means are not stored in the
    /// trace file and come back empty.
    pub fn from_csv(csv: &Csv, path: &Path) -> Result<Self> {
        let format = |reason: String| Error::Format { path: path.into(), reason };
        let header = csv.header();
        if header.first().map(String::as_str) != Some("epoch") {
            return Err(format("first column must be `epoch`".into()));
        }
        let mut offsets = vec![0];
        for (k, h) in header[1..].iter().enumerate() {
            let bad = || format(format!("bad unit column `{h}`"));
            let (l, i) = h
                .strip_prefix('u')
                .and_then(|s| s.split_once('_'))
                .and_then(|(l, i)| Some((l.parse::<usize>().ok()?, i.parse::<usize>().ok()?)))
                .ok_or_else(bad)?;
            let layer_start = offsets[offsets.len() - 1];
            if l + 1 == offsets.len() && i == k - layer_start {
                continue;
            }
            // first unit of the next layer closes the current one
            if k > layer_start && l + 1 == offsets.len() + 1 && i == 0 {
                offsets.push(k);
            } else {
                return Err(bad());
            }
        }
        if header.len() > 1 {
            offsets.push(header.len() - 1);
        }
        let mut trace = ActivationTrace { epochs: Vec::new(), medians: Vec::new(), means: Vec::new(), layer_offsets: offsets };
        for row in csv.rows() {
            let epoch = row[0].parse().map_err(|_| format(format!("bad epoch `{}`", row[0])))?;
            let medians = row[1..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| format(format!("bad value `{v}`"))))
                .collect::<Result<Vec<_>>>()?;
            trace.epochs.push(epoch);
            trace.medians.push(medians);
            trace.means.push(Vec::new());
        }
        Ok(trace)
    }

    /// `epoch,median_of_medians,mean_of_means`
    pub fn summary_csv(&self) -> Csv {
        let mut csv = Csv::new(["epoch", "median_of_medians", "mean_of_means"]);
        for ((e, m), mm) in self.epochs.iter().zip(trace_summary(self)).zip(mean_of_means(self)) {
            csv.push(vec![e.to_string(), fmt_f64(m), mm.map(fmt_f64).unwrap_or_default()]);
        }
        csv
    }
}

/// Per epoch, the median across units of the per-unit medians.
pub fn trace_summary(trace: &ActivationTrace) -> Vec<f64> {
    trace.medians.iter().map(|row| median(&mut row.clone())).collect()
}

/// Per epoch, the mean across units of the per-unit means (absent when the
/// means were not recorded).
pub fn mean_of_means(trace: &ActivationTrace) -> Vec<Option<f64>> {
    trace
        .means
        .iter()
        .map(|row| (!row.is_empty()).then(|| row.iter().sum::<f64>() / row.len() as f64))
        .collect()
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Per-layer lists of per-unit variances.
#[derive(Clone, Debug, PartialEq)]
pub struct MedianVarianceSummary {
    /// Variance across epochs of each unit's median.
    pub per_layer: Vec<(usize, Vec<f64>)>,
    /// Variance of the epoch-to-epoch changes of each unit's median; needs
    /// at least three epochs.
    pub first_difference: Option<Vec<(usize, Vec<f64>)>>,
}

impl MedianVarianceSummary {
    /// Mean over units of the per-unit variance, per layer.
    pub fn layer_means(&self) -> Vec<f64> {
        self.per_layer.iter().map(|(_, v)| v.iter().sum::<f64>() / v.len() as f64).collect()
    }

    /// `layer,unit,variance,diff_variance`
    pub fn to_csv(&self) -> Csv {
        let mut csv = Csv::new(["layer", "unit", "variance", "diff_variance"]);
        for (k, (layer, vars)) in self.per_layer.iter().enumerate() {
            for (i, v) in vars.iter().enumerate() {
                let diff = self.first_difference.as_ref().map(|d| fmt_f64(d[k].1[i])).unwrap_or_default();
                csv.push(vec![layer.to_string(), i.to_string(), fmt_f64(*v), diff]);
            }
        }
        csv
    }
}

pub fn median_variance(trace: &ActivationTrace) -> Result<MedianVarianceSummary> {
    if trace.epochs.len() < 2 {
        return Err(Error::Config(format!("median variance needs >= 2 epochs, got {}", trace.epochs.len())));
    }
    let series = |u: usize| -> Vec<f64> { trace.medians.iter().map(|row| row[u]).collect() };
    let group = |f: &dyn Fn(Vec<f64>) -> f64| -> Vec<(usize, Vec<f64>)> {
        (0..trace.layers())
            .map(|l| (l, (trace.layer_offsets[l]..trace.layer_offsets[l + 1]).map(|u| f(series(u))).collect()))
            .collect()
    };
    let per_layer = group(&|s| sample_variance(&s));
    let first_difference = (trace.epochs.len() >= 3)
        .then(|| group(&|s| sample_variance(&s.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())));
    Ok(MedianVarianceSummary { per_layer, first_difference })
}

/// Records an [`ActivationTrace`] on a fixed input set after every epoch.
pub struct MedianTracker {
    pub probe: Matrix,
    pub exec: Exec,
    pub trace: ActivationTrace,
}

impl MedianTracker {
    pub fn new(net: &Network, probe: Matrix, exec: Exec) -> Self {
        MedianTracker { probe, exec, trace: ActivationTrace::for_network(net) }
    }
}

impl EpochHook for MedianTracker {
    fn after_epoch(&mut self, epoch: usize, net: &Network) -> Result<Option<f64>> {
        self.trace.record(epoch, net, &self.probe, self.exec)?;
        Ok(Some(median(&mut self.trace.medians.last().unwrap().clone())))
    }
}

/// Mean squared reconstruction error, averaged over examples and dimensions.
pub fn reconstruction_error(net: &Network, data: &Dataset, exec: Exec) -> Result<f64> {
    if net.output_dim() != data.dim() || net.input_dim() != data.dim() {
        return Err(Error::shape("reconstruction_error", data.inputs.shape(), (net.input_dim(), net.output_dim())));
    }
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let out = net.predict(&data.inputs, exec)?;
    let sq: f64 = out
        .as_slice()
        .iter()
        .zip(data.inputs.as_slice())
        .map(|(y, x)| (y - x) * (y - x))
        .sum();
    Ok(sq / (data.len() * data.dim()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;
    use crate::network::{Layer, LayerActivation, Loss};

    fn trace_from(rows: &[&[f64]], offsets: Vec<usize>) -> ActivationTrace {
        ActivationTrace {
            epochs: (1..=rows.len()).collect(),
            medians: rows.iter().map(|r| r.to_vec()).collect(),
            means: rows.iter().map(|r| r.to_vec()).collect(),
            layer_offsets: offsets,
        }
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [-1.0, 1.0, 0.0]), 0.0);
    }

    #[test]
    fn zero_weight_elu_net_has_zero_medians() {
        let layers = vec![
            Layer::new(Matrix::zeros(3, 2), Vector::zeros(3), LayerActivation::Hidden(Activation::elu(1.0).unwrap())).unwrap(),
            Layer::new(Matrix::zeros(2, 3), Vector::zeros(2), LayerActivation::Softmax).unwrap(),
        ];
        let net = Network::new(layers, Loss::SoftmaxCrossEntropy).unwrap();
        let probe = Dataset::new(Matrix::from_rows(&[&[1.0, 2.0], &[-3.0, 0.5]]).unwrap(), None, "p").unwrap();
        assert_eq!(unit_medians(&net, &probe, Exec::Sequential).unwrap(), Vector::zeros(3));
    }

    #[test]
    fn medians_over_probe_examples() {
        // identity hidden layer via a single unit with weight 1 on ReLU
        let layers = vec![
            Layer::new(Matrix::from_rows(&[&[1.0]]).unwrap(), Vector::zeros(1), LayerActivation::Hidden(Activation::Relu)).unwrap(),
            Layer::new(Matrix::from_rows(&[&[1.0], &[0.0]]).unwrap(), Vector::zeros(2), LayerActivation::Softmax).unwrap(),
        ];
        let net = Network::new(layers, Loss::SoftmaxCrossEntropy).unwrap();
        let probe = |xs: &[f64]| Dataset::new(Matrix::new(xs.len(), 1, xs.to_vec()).unwrap(), None, "p").unwrap();
        assert_eq!(unit_medians(&net, &probe(&[1.0, 2.0, 3.0]), Exec::Sequential).unwrap()[0], 2.0);
        assert_eq!(unit_medians(&net, &probe(&[4.0, 1.0, 3.0, 2.0]), Exec::Sequential).unwrap()[0], 2.5);
        assert_eq!(unit_medians(&net, &probe(&[3.0, 2.0, 1.0, 4.0]), Exec::Parallel).unwrap()[0], 2.5);
        assert!(unit_medians(&net, &probe(&[]), Exec::Sequential).is_err());
    }

    #[test]
    fn summary_across_units() {
        let t = trace_from(&[&[0.5], &[0.7]], vec![0, 1]);
        assert_eq!(trace_summary(&t), vec![0.5, 0.7]);
        let t = trace_from(&[&[-1.0, 0.0, 1.0]], vec![0, 3]);
        assert_eq!(trace_summary(&t), vec![0.0]);
        assert_eq!(mean_of_means(&t), vec![Some(0.0)]);
    }

    #[test]
    fn variance_conventions() {
        let t = trace_from(&[&[0.0, 3.0], &[2.0, 3.0]], vec![0, 1, 2]);
        let s = median_variance(&t).unwrap();
        assert_eq!(s.per_layer, vec![(0, vec![2.0]), (1, vec![0.0])]);
        assert!(s.first_difference.is_none());
        assert!(median_variance(&trace_from(&[&[1.0]], vec![0, 1])).is_err());

        let t = trace_from(&[&[0.0], &[1.0], &[3.0]], vec![0, 1]);
        let s = median_variance(&t).unwrap();
        // changes 1, 2
        assert_eq!(s.first_difference.unwrap(), vec![(0, vec![0.5])]);
    }

    #[test]
    fn trace_csv_round_trip_is_bit_exact() {
        let net = Network::init_he(&[4, 3, 2, 2], &[Activation::elu(1.0).unwrap(), Activation::Relu], Loss::SoftmaxCrossEntropy, 5).unwrap();
        let probe = Dataset::new(Matrix::new(5, 4, (0..20).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(), None, "p").unwrap();
        let mut tracker = MedianTracker::new(&net, probe.inputs.clone(), Exec::Sequential);
        tracker.after_epoch(1, &net).unwrap();
        tracker.after_epoch(2, &net).unwrap();
        let csv = tracker.trace.to_csv();
        assert_eq!(csv.header()[..3], ["epoch", "u0_0", "u0_1"]);
        assert_eq!(csv.header()[4], "u1_0");
        let back = ActivationTrace::from_csv(&Csv::parse(&csv.render(), Path::new("t")).unwrap(), Path::new("t")).unwrap();
        assert_eq!(back.layer_offsets, vec![0, 3, 5]);
        assert_eq!(back.medians, tracker.trace.medians);
        let a: Vec<u64> = trace_summary(&back).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = trace_summary(&tracker.trace).iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn reconstruction_error_oracles() {
        let identity = Layer::new(Matrix::identity(3), Vector::zeros(3), LayerActivation::Linear).unwrap();
        let net = Network::new(vec![identity], Loss::MeanSquaredError).unwrap();
        let data = Dataset::new(Matrix::new(4, 3, (0..12).map(|i| i as f64 / 7.0).collect()).unwrap(), None, "d").unwrap();
        assert_eq!(reconstruction_error(&net, &data, Exec::Sequential).unwrap(), 0.0);

        let zero = Layer::new(Matrix::zeros(3, 3), Vector::zeros(3), LayerActivation::Linear).unwrap();
        let net = Network::new(vec![zero], Loss::MeanSquaredError).unwrap();
        let mut m = 0.0;
        for r in 0..4 {
            for c in 0..3 {
                m += data.inputs[(r, c)] * data.inputs[(r, c)];
            }
        }
        m /= 12.0;
        assert!((reconstruction_error(&net, &data, Exec::Sequential).unwrap() - m).abs() < 1e-12);

        let wrong = Dataset::new(Matrix::zeros(2, 2), None, "w").unwrap();
        assert!(reconstruction_error(&net, &wrong, Exec::Sequential).is_err());
    }
}
