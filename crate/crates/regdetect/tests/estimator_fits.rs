//! Statistical behavior of the trained estimators against independent
//! oracles (sample moments, Gaussian quantiles, rank correlations,
//! Kolmogorov-Smirnov).

mod common;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regdetect::data::{generate_toy, Dataset, ToySpec};
use regdetect::detectors::DiscrepancyKind;
use regdetect::estimators::{
    fit_cond_gaussian, fit_discrepancy_estimator, fit_mixture, fit_sqr, normal_quantile,
    CondEstimator, EstimatorKind, EstimatorOptions, PointDistribution,
};
use regdetect::FnRegressor;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    normal_quantile(rng.gen_range(1e-12..1.0))
}

fn quick(mut opts: EstimatorOptions, epochs: usize, lr: f64) -> EstimatorOptions {
    opts.epochs = epochs;
    opts.lr_grid = vec![lr];
    opts.wd_grid = vec![0.0];
    opts.folds = 3;
    opts
}

fn gaussian_mean_std(dist: &PointDistribution) -> (f64, f64) {
    match dist {
        PointDistribution::GaussianMix { weights, means, stds } => {
            let mean: f64 = weights.iter().zip(means).map(|(w, m)| w * m).sum();
            let var: f64 = weights
                .iter()
                .zip(means)
                .zip(stds)
                .map(|((w, m), s)| w * (s * s + (m - mean).powi(2)))
                .sum();
            (mean, var.sqrt())
        }
        _ => panic!("expected gaussian mixture"),
    }
}

#[test]
fn cond_gaussian_recovers_constant_law() {
    // y ~ N(3, 2^2) independent of x; sample-moment oracle
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-2.0..2.0));
    let ys = Array1::from_shape_fn(n, |_| 3.0 + 2.0 * normal(&mut rng));
    let sample_mean = ys.sum() / n as f64;
    let sample_std =
        (ys.mapv(|y| (y - sample_mean).powi(2)).sum() / (n as f64 - 1.0)).sqrt();
    let ds = Dataset::new(xs, ys, None).unwrap();
    let opts = quick(EstimatorOptions::cond_gaussian(), 400, 1e-2);
    let est = fit_cond_gaussian(&ds, &opts, 0).unwrap();
    for &x in &[-1.5, 0.0, 1.5] {
        let dist = est.at(array![x].view()).unwrap();
        let (mu, sigma) = gaussian_mean_std(&dist);
        assert!((mu - sample_mean).abs() < 0.1, "mu {mu} vs {sample_mean}");
        assert!((sigma - sample_std).abs() < 0.15, "sigma {sigma} vs {sample_std}");
    }
}

#[test]
fn cond_gaussian_tracks_heteroscedastic_scale() {
    // fitted scale correlates with the true sigma(x) profile
    let spec = ToySpec::cubic_bias();
    let (ds, _) = generate_toy(&spec, 4000, 7).unwrap();
    let opts = quick(EstimatorOptions::cond_gaussian(), 150, 1e-2);
    let est = fit_cond_gaussian(&ds, &opts, 1).unwrap();
    let grid: Vec<f64> = (0..40).map(|i| -2.0 + i as f64 * 0.1).collect();
    let mut fitted = Vec::new();
    let mut truth = Vec::new();
    for &x in &grid {
        let (_, sigma) = gaussian_mean_std(&est.at(array![x].view()).unwrap());
        fitted.push(sigma);
        truth.push((spec.sigma)(x));
    }
    let rho = common::spearman(&fitted, &truth);
    assert!(rho > 0.8, "spearman {rho}");
}

#[test]
fn sqr_learns_gaussian_quantiles() {
    // smoke-scale version of the quantile fidelity check
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |_| normal(&mut rng));
    let ds = Dataset::new(xs, ys, None).unwrap();
    let opts = quick(EstimatorOptions::sqr(), 300, 1e-3);
    let est = fit_sqr(&ds, &opts, 3).unwrap();
    let mut err_med = 0.0f64;
    let mut err_hi = 0.0f64;
    let grid: Vec<f64> = (0..20).map(|i| -0.9 + i as f64 * 0.09).collect();
    for &x in &grid {
        let q50 = est.quantile(0.5, array![x].view()).unwrap();
        let q84 = est.quantile(0.841, array![x].view()).unwrap();
        err_med += q50.abs();
        err_hi += (q84 - 1.0).abs();
    }
    err_med /= grid.len() as f64;
    err_hi /= grid.len() as f64;
    assert!(err_med < 0.15, "median error {err_med}");
    assert!(err_hi < 0.2, "0.841-quantile error {err_hi}");
}

#[test]
fn sqr_inverse_consistency_after_training() {
    let n = 800;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |_| normal(&mut rng));
    let ds = Dataset::new(xs, ys, None).unwrap();
    let opts = quick(EstimatorOptions::sqr(), 150, 1e-3);
    let est = fit_sqr(&ds, &opts, 4).unwrap();
    let x = array![0.2];
    // quantiles nondecreasing in tau
    let mut last = f64::NEG_INFINITY;
    for i in 1..100 {
        let q = est.quantile(i as f64 / 100.0, x.view()).unwrap();
        assert!(q >= last);
        last = q;
    }
    for tau in [0.05, 0.3, 0.5, 0.7, 0.95] {
        let q = est.quantile(tau, x.view()).unwrap();
        let back = est.cdf(q, x.view()).unwrap();
        assert!((back - tau).abs() <= 1e-3, "tau {tau} -> {back}");
    }
}

#[test]
fn mixture_captures_bimodal_target() {
    // y in {-2, +2} +- N(0, 0.1); the estimator cdf at 0 must sit near 0.5
    // and modes must exist near both centers
    let n = 3000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |_| {
        let center = if rng.gen_bool(0.5) { 2.0 } else { -2.0 };
        center + 0.1 * normal(&mut rng)
    });
    let empirical_at_zero =
        ys.iter().filter(|&&y| y <= 0.0).count() as f64 / n as f64;
    let ds = Dataset::new(xs, ys, None).unwrap();
    let mut opts = quick(EstimatorOptions::mixture(), 300, 1e-2);
    opts.modes = 16;
    let est = fit_mixture(&ds, &opts, 2).unwrap();
    let x = array![0.0];
    let c0 = est.cdf(0.0, x.view()).unwrap();
    assert!((c0 - empirical_at_zero).abs() < 0.1, "cdf(0) = {c0} vs {empirical_at_zero}");
    match est.at(x.view()).unwrap() {
        PointDistribution::GaussianMix { weights, means, .. } => {
            let near = |target: f64| {
                weights
                    .iter()
                    .zip(&means)
                    .filter(|(_, m)| (*m - target).abs() < 0.5)
                    .map(|(w, _)| w)
                    .sum::<f64>()
            };
            assert!(near(2.0) > 0.2, "mass near +2: {}", near(2.0));
            assert!(near(-2.0) > 0.2, "mass near -2: {}", near(-2.0));
        }
        _ => panic!("expected mixture"),
    }
}

#[test]
fn single_mode_mixture_matches_cond_gaussian_nll() {
    let n = 1500;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |i| {
        let x = xs[[i, 0]];
        0.5 * x + 0.4 * normal(&mut rng)
    });
    let ds = Dataset::new(xs, ys, None).unwrap();
    let mut mix_opts = quick(EstimatorOptions::mixture(), 250, 1e-2);
    mix_opts.modes = 1;
    let mut cg_opts = quick(EstimatorOptions::cond_gaussian(), 250, 1e-2);
    cg_opts.ensemble = 1;
    let mix = fit_mixture(&ds, &mix_opts, 5).unwrap();
    let cg = fit_cond_gaussian(&ds, &cg_opts, 5).unwrap();
    // average held-out style NLL on the training rows
    let nll = |est: &CondEstimator| -> f64 {
        let mut total = 0.0;
        for i in 0..ds.n_rows() {
            match est.at(ds.row(i)).unwrap() {
                PointDistribution::GaussianMix { weights, means, stds } => {
                    let y = ds.targets()[i];
                    let p: f64 = weights
                        .iter()
                        .zip(&means)
                        .zip(&stds)
                        .map(|((w, m), s)| {
                            w * (-0.5 * ((y - m) / s).powi(2)).exp()
                                / (s * (2.0 * std::f64::consts::PI).sqrt())
                        })
                        .sum();
                    total -= p.max(1e-300).ln();
                }
                _ => panic!("gaussian expected"),
            }
        }
        total / ds.n_rows() as f64
    };
    let (a, b) = (nll(&mix), nll(&cg));
    assert!((a - b).abs() < 0.15, "mixture {a} vs gaussian {b}");
}

#[test]
fn discrepancy_estimator_learns_half_normal_median() {
    // regressor equals the true conditional mean; absolute residuals are
    // half-normal with sigma 1 whose median is 0.6745
    let n = 4000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |i| 2.0 * xs[[i, 0]] + normal(&mut rng));
    let ds = Dataset::new(xs, ys, None).unwrap();
    let truth = FnRegressor(|x: ndarray::ArrayView1<f64>| 2.0 * x[0]);
    let opts = quick(EstimatorOptions::sqr(), 250, 1e-3);
    let est = fit_discrepancy_estimator(
        &ds,
        &truth,
        DiscrepancyKind::Absolute,
        EstimatorKind::Sqr,
        &opts,
        11,
    )
    .unwrap();
    let half_normal_median = 0.674489750196;
    for &x in &[-0.5, 0.0, 0.5] {
        let med = est.quantile(0.5, array![x].view()).unwrap();
        assert!(
            (med - half_normal_median).abs() < 0.1,
            "median at {x}: {med} vs {half_normal_median}"
        );
    }
}

#[test]
fn zero_error_corpus_degenerates() {
    let n = 600;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |i| 1.5 * xs[[i, 0]] - 0.3);
    let ds = Dataset::new(xs, ys, None).unwrap();
    let truth = FnRegressor(|x: ndarray::ArrayView1<f64>| 1.5 * x[0] - 0.3);
    let opts = quick(EstimatorOptions::sqr(), 250, 1e-2);
    let est = fit_discrepancy_estimator(
        &ds,
        &truth,
        DiscrepancyKind::Absolute,
        EstimatorKind::Sqr,
        &opts,
        4,
    )
    .unwrap();
    let q = est.quantile(0.9, array![0.0].view()).unwrap();
    assert!(q >= 0.0, "nonnegative domain violated: {q}");
    assert!(q <= 0.05, "degenerate corpus quantile {q}");
}

#[test]
fn sampling_matches_own_cdf_for_trained_sqr() {
    let n = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let xs = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
    let ys = Array1::from_shape_fn(n, |_| 0.5 * normal(&mut rng) + 1.0);
    let ds = Dataset::new(xs, ys, None).unwrap();
    let opts = quick(EstimatorOptions::sqr(), 120, 1e-3);
    let est = fit_sqr(&ds, &opts, 6).unwrap();
    let x = array![0.3];
    let mut sample = est.sample(x.view(), 100_000, 12).unwrap();
    let dist = est.at(x.view()).unwrap();
    let ks = common::ks_statistic(&mut sample, |v| dist.cdf(v));
    assert!(ks < 0.01, "ks {ks}");
}

#[test]
fn sampling_matches_own_cdf_for_gaussian_mix() {
    // hand-set two-member ensemble
    let mk = |mu: f64, sigma: f64| {
        let mut net =
            regdetect::nn::DenseNet::zeros(&[1, 2, 2], regdetect::nn::Activation::Identity)
                .unwrap();
        net.layers[1].b = array![mu, ((sigma - 1e-4f64).exp() - 1.0).ln()];
        net
    };
    let est = CondEstimator::from_gaussian_members(
        vec![mk(-1.0, 0.5), mk(2.0, 1.5)],
        1e-4,
        regdetect::estimators::TargetDomain::RealLine,
    )
    .unwrap();
    let x = array![0.0];
    let mut sample = est.sample(x.view(), 100_000, 3).unwrap();
    let dist = est.at(x.view()).unwrap();
    let ks = common::ks_statistic(&mut sample, |v| dist.cdf(v));
    assert!(ks < 0.01, "ks {ks}");
}

#[test]
fn cdf_monotone_on_grid_for_all_kinds() {
    let spec = ToySpec::cubic_bias();
    let (ds, _) = generate_toy(&spec, 600, 19).unwrap();
    let cg = fit_cond_gaussian(&ds, &quick(EstimatorOptions::cond_gaussian(), 60, 1e-2), 0)
        .unwrap();
    let sqr = fit_sqr(&ds, &quick(EstimatorOptions::sqr(), 60, 1e-3), 0).unwrap();
    let mut mix_opts = quick(EstimatorOptions::mixture(), 60, 1e-2);
    mix_opts.modes = 4;
    let mix = fit_mixture(&ds, &mix_opts, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for est in [&cg, &sqr, &mix] {
        for _ in 0..50 {
            let x = array![rng.gen_range(-2.0..2.0)];
            let dist = est.at(x.view()).unwrap();
            let mut last = -1e-12;
            for i in 0..200 {
                let v = -4.0 + i as f64 * 0.04;
                let c = dist.cdf(v);
                assert!(c >= last - 1e-9, "cdf decreased at {v}");
                assert!((-1e-9..=1.0 + 1e-9).contains(&c));
                last = c;
            }
        }
    }
}
