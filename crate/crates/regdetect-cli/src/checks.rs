//! The `check` subcommand: fast gradient and invariant self-tests.
//!
//! Each check prints one line; the command exits nonzero if any fails.

use ndarray::{array, Array2};

use regdetect::detectors::symmetrize;
use regdetect::nn::{
    grad_check, train_network, Activation, DenseNet, Loss, TauSource, TrainConfig,
};

use crate::{CliError, CliResult};

type Check = (&'static str, fn() -> Result<(), String>);

pub(crate) fn run_all() -> CliResult<()> {
    let checks: Vec<Check> = vec![
        ("grad-mse", || grad_suite(Loss::Mse, 1, 11)),
        ("grad-pinball", || {
            grad_suite(Loss::Pinball { tau: TauSource::Fixed(0.3) }, 1, 12)
        }),
        ("grad-gaussian-nll", || grad_suite(Loss::GaussianNll { sigma_floor: 1e-4 }, 2, 13)),
        ("grad-mixture-nll", || {
            grad_suite(
                Loss::MixtureNll { modes: 3, sigma_floor: 1e-4, nonneg_means: false },
                9,
                14,
            )
        }),
        ("grad-dv-separation", grad_dv),
        ("adam-zero-lr-identity", adam_identity),
        ("pinball-half-is-half-abs", pinball_half),
        ("symmetrize-bit-exact", symmetry),
        ("estimator-cdf-monotone", cdf_monotone),
        ("oracle-vs-quadrature", oracle_vs_quadrature),
    ];
    let mut failed = 0usize;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok {name}"),
            Err(msg) => {
                println!("FAIL {name}: {msg}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        Err(CliError::Runtime(format!("{failed} self-check(s) failed")))
    } else {
        println!("all self-checks passed");
        Ok(())
    }
}

fn random_batch(rows: usize, cols: usize, seed: u64, spread: f64) -> Array2<f64> {
    use rand::Rng;
    let mut rng = rand_chacha_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-spread..spread))
}

fn rand_chacha_seed(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn grad_suite(loss: Loss, out_dim: usize, seed: u64) -> Result<(), String> {
    for draw in 0..3u64 {
        let net = DenseNet::new(&[3, 8, out_dim], Activation::Identity, seed + draw)
            .map_err(|e| e.to_string())?;
        let inputs = random_batch(5, 3, 100 + draw, 1.5);
        let targets = random_batch(5, 1, 200 + draw, 1.0);
        let err = grad_check(&net, loss, inputs.view(), targets.view())
            .map_err(|e| e.to_string())?;
        if err > 1e-4 {
            return Err(format!("max relative error {err:.3e} on draw {draw}"));
        }
    }
    Ok(())
}

fn grad_dv() -> Result<(), String> {
    // symmetrized pairs with signed class weights through a sigmoid head
    for draw in 0..3u64 {
        let net = DenseNet::new(&[2, 8, 8, 1], Activation::Sigmoid, 40 + draw)
            .map_err(|e| e.to_string())?;
        let pairs = random_batch(6, 2, 300 + draw, 2.0).mapv(f64::abs);
        let mut inputs = Array2::zeros((12, 2));
        let mut weights = Array2::zeros((12, 1));
        for i in 0..6 {
            inputs[[i, 0]] = pairs[[i, 0]];
            inputs[[i, 1]] = pairs[[i, 1]];
            inputs[[6 + i, 0]] = pairs[[i, 1]];
            inputs[[6 + i, 1]] = pairs[[i, 0]];
            let w = if i % 2 == 0 { 0.25 } else { -0.25 };
            weights[[i, 0]] = w;
            weights[[6 + i, 0]] = w;
        }
        let err = grad_check(&net, Loss::DvSeparation, inputs.view(), weights.view())
            .map_err(|e| e.to_string())?;
        if err > 1e-4 {
            return Err(format!("max relative error {err:.3e} on draw {draw}"));
        }
    }
    Ok(())
}

fn adam_identity() -> Result<(), String> {
    let net = DenseNet::new(&[2, 6, 1], Activation::Identity, 3).map_err(|e| e.to_string())?;
    let before = net.clone();
    let x = random_batch(16, 2, 7, 1.0);
    let y = random_batch(16, 1, 8, 1.0);
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
    let out = train_network(net, &x, &y, Loss::Mse, &cfg).map_err(|e| e.to_string())?;
    for (a, b) in out.net.layers.iter().zip(&before.layers) {
        if a.w != b.w || a.b != b.b {
            return Err("parameters moved at zero learning rate".into());
        }
    }
    Ok(())
}

fn pinball_half() -> Result<(), String> {
    let loss = Loss::Pinball { tau: TauSource::Fixed(0.5) };
    let inputs = Array2::zeros((1, 1));
    for &u in &[-2.5, -0.1, 0.0, 0.4, 3.0] {
        let outputs = array![[0.0]];
        let targets = array![[u]];
        let (v, _) = loss
            .eval(inputs.view(), outputs.view(), targets.view())
            .map_err(|e| e.to_string())?;
        if (v - 0.5 * u.abs()).abs() > 1e-15 {
            return Err(format!("pinball(0.5) at u={u} gave {v}"));
        }
    }
    Ok(())
}

fn symmetry() -> Result<(), String> {
    let net = DenseNet::new(&[2, 16, 16, 1], Activation::Sigmoid, 5).map_err(|e| e.to_string())?;
    for &(u, v) in &[(0.0, 1.0), (2.5, 0.3), (4.0, 4.0)] {
        let a = symmetrize(&net, u, v);
        let b = symmetrize(&net, v, u);
        if a.to_bits() != b.to_bits() {
            return Err(format!("asymmetric at ({u}, {v})"));
        }
    }
    Ok(())
}

fn cdf_monotone() -> Result<(), String> {
    // hand-set conditional gaussian: mu = x, sigma = 0.7
    use regdetect::estimators::{CondEstimator, TargetDomain};
    let mut net = DenseNet::zeros(&[1, 2, 2], Activation::Identity).map_err(|e| e.to_string())?;
    net.layers[0].w = array![[1.0], [-1.0]];
    net.layers[1].w = array![[1.0, -1.0], [0.0, 0.0]];
    let c = ((0.7f64 - 1e-4).exp() - 1.0).ln();
    net.layers[1].b = array![0.0, c];
    let est = CondEstimator::from_gaussian_members(vec![net], 1e-4, TargetDomain::RealLine)
        .map_err(|e| e.to_string())?;
    let x = array![0.4];
    let mut last = -1.0;
    for i in 0..200 {
        let v = -5.0 + i as f64 * 0.05;
        let c = est.cdf(v, x.view()).map_err(|e| e.to_string())?;
        if c < last - 1e-12 {
            return Err(format!("cdf decreased at v={v}"));
        }
        last = c;
    }
    for tau in [0.05, 0.25, 0.5, 0.75, 0.95] {
        let q = est.quantile(tau, x.view()).map_err(|e| e.to_string())?;
        let back = est.cdf(q, x.view()).map_err(|e| e.to_string())?;
        if (back - tau).abs() > 1e-3 {
            return Err(format!("inverse consistency off at tau={tau}: {back}"));
        }
    }
    Ok(())
}

/// Simpson-rule integral of the standard normal density, an oracle
/// independent of the library's cdf implementation.
fn phi_quadrature(z: f64) -> f64 {
    let steps = 4000;
    let (a, b) = if z < 0.0 { (z, 0.0) } else { (0.0, z) };
    let h = (b - a) / steps as f64;
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = density(a) + density(b);
    for i in 1..steps {
        let t = a + i as f64 * h;
        acc += density(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let integral = acc * h / 3.0;
    if z < 0.0 {
        0.5 - integral
    } else {
        0.5 + integral
    }
}

fn oracle_vs_quadrature() -> Result<(), String> {
    use regdetect::data::ToySpec;
    use regdetect::detectors::{DiscrepancyKind, DiscrepancySpec, OracleModel};
    let model = OracleModel::new(ToySpec::cubic_bias());
    let spec = DiscrepancySpec::new(DiscrepancyKind::Absolute, 0.1).map_err(|e| e.to_string())?;
    for &x in &[-2.0, -0.5, 0.0, 0.8, 1.9] {
        let p = model.oracle_pb(x, &spec).map_err(|e| e.to_string())?;
        let b = model.bias(x);
        let s = model.sigma(x);
        let want =
            1.0 - (phi_quadrature((0.1 - b) / s) - phi_quadrature((-0.1 - b) / s));
        if (p - want).abs() > 1e-8 {
            return Err(format!("x={x}: {p} vs quadrature {want}"));
        }
    }
    Ok(())
}
