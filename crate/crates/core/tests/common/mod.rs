#![allow(dead_code)]

use elulab::data::{synthetic_two_gaussians, Dataset};
use elulab::fisher::{estimate_unit_fisher, FisherOptions, UnitFisherEstimate};
use elulab::linalg::{dense_inverse, Vector};
use elulab::optimizer::{train, TrainConfig};
use elulab::network::one_hot;
use elulab::{Activation, Loss, Matrix, Network, UnitRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn kinds() -> [Activation; 4] {
    [Activation::elu(1.0).unwrap(), Activation::Relu, Activation::leaky_relu(0.1).unwrap(), Activation::ShiftedRelu]
}

/// A Fisher estimate for a random unit of a small network trained briefly
/// on a synthetic two-class problem, with that unit's loss gradient.
pub struct FisherCase {
    pub net: Network,
    pub data: Dataset,
    pub unit: UnitRef,
    pub fisher: UnitFisherEstimate,
    pub g: Vector,
    pub g0: f64,
}

pub fn trained_fisher_case(seed: u64) -> FisherCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let act = kinds()[(seed % 4) as usize];
    let d = rng.random_range(3..=6);
    let h1 = rng.random_range(3..=6);
    let h2 = rng.random_range(3..=6);
    let data = synthetic_two_gaussians(240, d, 1.5, seed).unwrap();
    let net = Network::init_he(&[d, h1, h2, 2], &[act, act], Loss::SoftmaxCrossEntropy, seed).unwrap();
    let cfg = TrainConfig { learning_rate: 0.05, batch_size: 16, epochs: 3, shuffle_seed: seed, ..Default::default() };
    let (net, _) = train(net, &data, &data.head(0), &cfg, &mut []).unwrap();
    let layer = rng.random_range(1..=2);
    let unit = UnitRef::new(layer, rng.random_range(0..net.layers[layer].fan_out()));
    let fisher = estimate_unit_fisher(&net, unit, &data, &FisherOptions::default()).unwrap();
    let (grads, _) = net.batch_gradient(&data.inputs, &data.targets(Some(2)).unwrap(), Default::default()).unwrap();
    let (g, g0) = grads.unit(unit).unwrap();
    FisherCase { net, data, unit, fisher, g, g0 }
}

/// `F⁻¹ (g, g₀)` through an explicit dense inverse of the assembled matrix.
pub fn dense_natural_gradient(fisher: &UnitFisherEstimate, g: &Vector, g0: f64) -> Vector {
    let mut rhs = g.clone().into_vec();
    rhs.push(g0);
    dense_inverse(&fisher.full_matrix()).unwrap().mul_vec(&Vector::new(rhs).unwrap()).unwrap()
}

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-6;
/// Gradients smaller than this are compared on an absolute scale.
pub const FLOOR: f64 = 1e-3;

pub fn inputs(n: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

pub fn targets(loss: Loss, n: usize, k: usize, seed: u64) -> Matrix {
    match loss {
        Loss::SoftmaxCrossEntropy => one_hot(&(0..n).map(|i| (i * 7 + seed as usize) % k).collect::<Vec<_>>(), k).unwrap(),
        Loss::MeanSquaredError => inputs(n, k, seed + 100),
    }
}

pub fn loss_at(net: &Network, x: &Matrix, t: &Matrix) -> f64 {
    net.loss_value(net.forward(x).unwrap().output(), t).unwrap()
}

/// Largest relative deviation between backprop and central differences
/// over every weight and bias.
pub fn max_fd_error(net: &Network, x: &Matrix, t: &Matrix) -> f64 {
    let grads = net.backprop_loss(&net.forward(x).unwrap(), t).unwrap();
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, plus: f64, minus: f64| {
        let fd = (plus - minus) / (2.0 * H);
        let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FLOOR);
        worst = worst.max(err);
    };
    for l in 0..net.layers.len() {
        let (rows, cols) = net.layers[l].weights.shape();
        for i in 0..rows {
            for j in 0..cols {
                let mut p = net.clone();
                p.layers[l].weights[(i, j)] += H;
                let mut m = net.clone();
                m.layers[l].weights[(i, j)] -= H;
                check(grads.layers[l].d_weights[(i, j)], loss_at(&p, x, t), loss_at(&m, x, t));
            }
            let mut p = net.clone();
            p.layers[l].bias[i] += H;
            let mut m = net.clone();
            m.layers[l].bias[i] -= H;
            check(grads.layers[l].d_bias[i], loss_at(&p, x, t), loss_at(&m, x, t));
        }
    }
    worst
}
