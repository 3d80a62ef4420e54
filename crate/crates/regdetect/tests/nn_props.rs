//! Gradient correctness across loss kinds and architectures, against the
//! central-finite-difference oracle.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regdetect::nn::{grad_check, Activation, DenseNet, Loss, TauSource};

fn batch(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(lo..hi))
}

fn check_loss(loss: Loss, out_dim: usize, output: Activation, draws: u64, base_seed: u64) {
    for draw in 0..draws {
        let dims = [vec![4, 10, out_dim], vec![4, 8, 8, out_dim]][(draw % 2) as usize].clone();
        let net = DenseNet::new(&dims, output, base_seed + draw).unwrap();
        let inputs = batch(6, 4, 1000 + draw, -1.5, 1.5);
        let targets = batch(6, 1, 2000 + draw, -1.0, 1.0);
        let err = grad_check(&net, loss, inputs.view(), targets.view()).unwrap();
        assert!(err <= 1e-4, "{loss:?} draw {draw}: max rel err {err:.3e}");
    }
}

#[test]
fn gradients_mse() {
    check_loss(Loss::Mse, 1, Activation::Identity, 10, 1);
}

#[test]
fn gradients_pinball_away_from_kinks() {
    // random targets make u = y - q hit zero with probability zero
    check_loss(Loss::Pinball { tau: TauSource::Fixed(0.35) }, 1, Activation::Identity, 10, 2);
    check_loss(Loss::Pinball { tau: TauSource::LastInput }, 1, Activation::Identity, 5, 3);
    // softplus output (the nonnegative-domain configuration)
    check_loss(Loss::Pinball { tau: TauSource::Fixed(0.7) }, 1, Activation::Softplus, 5, 4);
}

#[test]
fn gradients_gaussian_nll() {
    check_loss(Loss::GaussianNll { sigma_floor: 1e-4 }, 2, Activation::Identity, 10, 5);
}

#[test]
fn gradients_mixture_nll() {
    check_loss(
        Loss::MixtureNll { modes: 4, sigma_floor: 1e-4, nonneg_means: false },
        12,
        Activation::Identity,
        8,
        6,
    );
    check_loss(
        Loss::MixtureNll { modes: 3, sigma_floor: 1e-4, nonneg_means: true },
        9,
        Activation::Identity,
        8,
        7,
    );
}

#[test]
fn training_is_bit_stable_for_fixed_seed() {
    use regdetect::nn::{train_network, TrainConfig};
    let x = batch(60, 2, 3, -1.0, 1.0);
    let y = batch(60, 1, 4, -1.0, 1.0);
    let cfg = TrainConfig { learning_rate: 1e-2, epochs: 30, ..TrainConfig::default() };
    let run = || {
        let net = DenseNet::new(&[2, 8, 1], Activation::Identity, 5).unwrap();
        train_network(net, &x, &y, Loss::Mse, &cfg).unwrap()
    };
    let a = run();
    let b = run();
    for (la, lb) in a.net.layers.iter().zip(&b.net.layers) {
        assert_eq!(la.w, lb.w);
        assert_eq!(la.b, lb.b);
    }
    assert_eq!(a.epoch_losses, b.epoch_losses);
}

#[test]
fn trained_regressor_reaches_noise_floor_on_unbiased_toy() {
    use regdetect::data::{generate_toy, ToySpec, XDist};
    use regdetect::nn::{train_regressor, RegressorOptions};
    use regdetect::Regressor;
    use std::sync::Arc as StdArc;
    // bias-free toy: phi = f, so the irreducible test MSE is E[sigma^2]
    let spec = ToySpec {
        phi: StdArc::new(|x| (1.5 * x).sin()),
        bias: StdArc::new(|_| 0.0),
        sigma: StdArc::new(|_| 0.3),
        x_dist: XDist::StdNormal,
    };
    let (train, _) = generate_toy(&spec, 1500, 50).unwrap();
    let (test, truth) = generate_toy(&spec, 1500, 51).unwrap();
    let opts = RegressorOptions {
        hidden: vec![32, 32],
        epochs: 200,
        batch_size: 32,
        lr_grid: vec![1e-2],
        wd_grid: vec![0.0],
        folds: 3,
    };
    let (reg, _) = train_regressor(&train, &opts, 9).unwrap();
    let preds = reg.predict_batch(test.features().view());
    let mse = test
        .targets()
        .iter()
        .zip(&preds)
        .map(|(y, p)| (y - p).powi(2))
        .sum::<f64>()
        / test.n_rows() as f64;
    let noise_floor = 0.3f64.powi(2);
    assert!(mse <= 2.0 * noise_floor, "test mse {mse} vs floor {noise_floor}");
    // sanity: the analytic regressor sits at the floor itself
    let oracle_preds = truth.predict_batch(test.features().view());
    let oracle_mse = test
        .targets()
        .iter()
        .zip(&oracle_preds)
        .map(|(y, p)| (y - p).powi(2))
        .sum::<f64>()
        / test.n_rows() as f64;
    assert!(oracle_mse <= 1.3 * noise_floor);
}

#[test]
fn gradients_dv_separation_through_symmetrized_head() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for draw in 0..10u64 {
        let net = DenseNet::new(&[2, 12, 12, 1], Activation::Sigmoid, 50 + draw).unwrap();
        let n = 5;
        let mut inputs = Array2::zeros((2 * n, 2));
        let mut weights = Array2::zeros((2 * n, 1));
        for i in 0..n {
            let (u, v) = (rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0));
            let w: f64 = if rng.gen_bool(0.5) { 0.5 / n as f64 } else { -0.5 / n as f64 };
            inputs[[i, 0]] = u;
            inputs[[i, 1]] = v;
            inputs[[n + i, 0]] = v;
            inputs[[n + i, 1]] = u;
            weights[[i, 0]] = w / 2.0;
            weights[[n + i, 0]] = w / 2.0;
        }
        let err = grad_check(&net, Loss::DvSeparation, inputs.view(), weights.view()).unwrap();
        assert!(err <= 1e-4, "draw {draw}: max rel err {err:.3e}");
    }
}
