//! Backprop against central finite differences, and the training loop
//! against a hand-written reference SGD loop.

mod common;

use common::{inputs, kinds, loss_at, max_fd_error, targets, REL_TOL};
use elulab::data::synthetic_two_gaussians;
use elulab::network::Gradients;
use elulab::optimizer::{epoch_order, train, TrainConfig};
use elulab::{Activation, Exec, Loss, Matrix, Network};

#[test]
fn backprop_matches_central_differences() {
    for loss in [Loss::SoftmaxCrossEntropy, Loss::MeanSquaredError] {
        for (k, act) in kinds().into_iter().enumerate() {
            let net = Network::init_he(&[5, 7, 6, 4], &[act, act], loss, 11 + k as u64).unwrap();
            let x = inputs(6, 5, k as u64);
            let t = targets(loss, 6, 4, k as u64);
            let err = max_fd_error(&net, &x, &t);
            assert!(err <= REL_TOL, "{act} {loss:?}: relative error {err:e}");
        }
    }
}

#[test]
fn elu_alpha_enters_the_gradient() {
    let act = Activation::elu(0.4).unwrap();
    let net = Network::init_he(&[3, 5, 2], &[act], Loss::SoftmaxCrossEntropy, 2).unwrap();
    let err = max_fd_error(&net, &inputs(4, 3, 9), &targets(Loss::SoftmaxCrossEntropy, 4, 2, 1));
    assert!(err <= REL_TOL, "{err:e}");
}

#[test]
fn batch_gradient_is_the_mean_of_single_example_gradients() {
    let net = Network::init_he(&[4, 6, 3], &[Activation::elu(1.0).unwrap()], Loss::SoftmaxCrossEntropy, 1).unwrap();
    let x = inputs(70, 4, 3);
    let t = targets(Loss::SoftmaxCrossEntropy, 70, 3, 0);
    let (batch, _) = net.batch_gradient(&x, &t, Exec::Parallel).unwrap();
    let mut sum = Gradients::zeros_like(&net);
    for r in 0..70 {
        let g = net.backprop_loss(&net.forward(&x.row_range(r, r + 1)).unwrap(), &t.row_range(r, r + 1)).unwrap();
        sum.add_assign(&g);
    }
    for (a, b) in batch.layers.iter().zip(&sum.layers) {
        assert!(a.d_weights.max_abs_diff(&b.d_weights.scale(1.0 / 70.0)) < 1e-15);
    }
}

/// Plain SGD written out with explicit loops over parameters.
fn reference_sgd(mut net: Network, x: &Matrix, t: &Matrix, lr: f64, batch: usize, epochs: usize, seed: u64) -> Network {
    for epoch in 1..=epochs {
        let order = epoch_order(x.rows(), seed, epoch);
        for idx in order.chunks(batch) {
            let xb = x.select_rows(idx);
            let tb = t.select_rows(idx);
            let g = net.backprop_loss(&net.forward(&xb).unwrap(), &tb).unwrap();
            for (layer, lg) in net.layers.iter_mut().zip(&g.layers) {
                let (rows, cols) = layer.weights.shape();
                for i in 0..rows {
                    for j in 0..cols {
                        layer.weights[(i, j)] -= lr * lg.d_weights[(i, j)];
                    }
                    layer.bias[i] -= lr * lg.d_bias[i];
                }
            }
        }
    }
    net
}

#[test]
fn training_loop_matches_reference_sgd() {
    let data = synthetic_two_gaussians(90, 4, 2.0, 5).unwrap();
    let t = data.targets(Some(2)).unwrap();
    for act in kinds() {
        let net = Network::init_he(&[4, 8, 5, 2], &[act, act], Loss::SoftmaxCrossEntropy, 3).unwrap();
        let cfg = TrainConfig { learning_rate: 0.05, batch_size: 16, epochs: 3, shuffle_seed: 9, ..Default::default() };
        let (trained, _) = train(net.clone(), &data, &data.head(0), &cfg, &mut []).unwrap();
        let reference = reference_sgd(net, &data.inputs, &t, 0.05, 16, 3, 9);
        for (a, b) in trained.layers.iter().zip(&reference.layers) {
            assert!(a.weights.max_abs_diff(&b.weights) <= 1e-12, "{act}");
            assert!(a.bias.max_abs_diff(&b.bias) <= 1e-12, "{act}");
        }
    }
}

#[test]
fn sequential_and_parallel_training_are_bit_identical() {
    let data = synthetic_two_gaussians(200, 6, 1.5, 1).unwrap();
    let net = Network::init_he(&[6, 16, 16, 2], &[Activation::elu(1.0).unwrap(); 2], Loss::SoftmaxCrossEntropy, 4).unwrap();
    let run = |exec| {
        let cfg = TrainConfig { epochs: 2, batch_size: 100, momentum: 0.9, exec, ..Default::default() };
        train(net.clone(), &data, &data, &cfg, &mut []).unwrap()
    };
    let (a, ma) = run(Exec::Sequential);
    let (b, mb) = run(Exec::Parallel);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
}

#[test]
fn training_reduces_loss_for_every_kind() {
    let data = synthetic_two_gaussians(200, 5, 2.0, 8).unwrap();
    for act in kinds() {
        let net = Network::init_he(&[5, 10, 2], &[act], Loss::SoftmaxCrossEntropy, 0).unwrap();
        let before = loss_at(&net, &data.inputs, &data.targets(Some(2)).unwrap());
        let cfg = TrainConfig { epochs: 10, batch_size: 20, learning_rate: 0.05, ..Default::default() };
        let (_, m) = train(net, &data, &data, &cfg, &mut []).unwrap();
        let after = m.last().unwrap().train_loss;
        assert!(after < before, "{act}: {after} !< {before}");
        assert!(m.last().unwrap().accuracy.unwrap() > 0.8, "{act}");
    }
}
