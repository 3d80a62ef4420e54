//! Adam training loop, gradient checking and cross-validation.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseNet, Gradients, Layer, Loss, NetRegressor};
use crate::data::Dataset;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 0.0,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParam("learning rate must be >= 0".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::InvalidParam("weight decay must be >= 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidParam("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Adam moment estimates with decoupled weight decay (decay is applied to
/// the weight matrices directly, not through the gradient; biases are not
/// decayed).
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: usize,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        let zeros: Vec<Layer> = net
            .layers
            .iter()
            .map(|l| Layer { w: Array2::zeros(l.w.dim()), b: ndarray::Array1::zeros(l.b.len()) })
            .collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / bias1) / ((*v / bias2).sqrt() + cfg.adam_epsilon);
                    *p -= cfg.learning_rate * update;
                    *p -= cfg.learning_rate * cfg.weight_decay * *p;
                });
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / bias1) / ((*v / bias2).sqrt() + cfg.adam_epsilon);
                    *p -= cfg.learning_rate * update;
                });
        }
    }
}

/// A trained network plus the mean training loss per epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: DenseNet,
    pub epoch_losses: Vec<f64>,
}

/// The no-op batch transform used by plain training.
pub fn identity_batch_map(
    _rng: &mut ChaCha8Rng,
    inputs: Array2<f64>,
    targets: Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    (inputs, targets)
}

/// Runs `epochs` passes of shuffled minibatch Adam steps.
pub fn train_network(
    net: DenseNet,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: Loss,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_network_with(net, inputs, targets, loss, cfg, identity_batch_map)
}

/// Like [`train_network`] but maps every minibatch through `batch_map`
/// before the forward pass (used to resample quantile levels per batch
/// element). The map receives the epoch's generator.
pub fn train_network_with<F>(
    mut net: DenseNet,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: Loss,
    cfg: &TrainConfig,
    mut batch_map: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&mut ChaCha8Rng, Array2<f64>, Array2<f64>) -> (Array2<f64>, Array2<f64>),
{
    cfg.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::InvalidDataset("empty training data".into()));
    }
    if targets.nrows() != n {
        return Err(Error::ShapeMismatch {
            context: "training targets",
            expected: format!("{n} rows"),
            got: format!("{}", targets.nrows()),
        });
    }

    let mut adam = AdamState::new(&net);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, &[0x6570_6f63, epoch as u64]);
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            let bx = inputs.select(Axis(0), chunk);
            let bt = targets.select(Axis(0), chunk);
            let (bx, bt) = batch_map(&mut rng, bx, bt);
            let cache = net.forward_cache(bx.view());
            let (value, output_grad) = loss.eval(bx.view(), cache.output().view(), bt.view())?;
            if !value.is_finite() {
                return Err(Error::NanLoss { epoch, batch: batch_no, loss: value });
            }
            let grads = net.backward(bx.view(), &cache, &output_grad);
            adam.step(&mut net, &grads, cfg);
            epoch_loss += value * chunk.len() as f64;
        }
        epoch_losses.push(epoch_loss / n as f64);
    }
    if !net.all_finite() {
        return Err(Error::NanLoss { epoch: cfg.epochs, batch: 0, loss: f64::NAN });
    }
    Ok(TrainOutcome { net, epoch_losses })
}

/// Compares the analytic gradient against central finite differences
/// (step 1e-5) over all parameters and returns the largest guarded
/// relative error.
pub fn grad_check(
    net: &DenseNet,
    loss: Loss,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let cache = net.forward_cache(inputs);
    let (_, output_grad) = loss.eval(inputs, cache.output().view(), targets.view())?;
    let analytic = net.backward(inputs, &cache, &output_grad);

    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let n_layers = probe.layers.len();
    for li in 0..n_layers {
        let shape = probe.layers[li].w.dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let orig = probe.layers[li].w[[r, c]];
                probe.layers[li].w[[r, c]] = orig + STEP;
                let plus = eval_loss(&probe, loss, inputs, targets)?;
                probe.layers[li].w[[r, c]] = orig - STEP;
                let minus = eval_loss(&probe, loss, inputs, targets)?;
                probe.layers[li].w[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                let a = analytic.layers[li].w[[r, c]];
                worst = worst.max(rel_err(a, numeric));
            }
        }
        for r in 0..probe.layers[li].b.len() {
            let orig = probe.layers[li].b[r];
            probe.layers[li].b[r] = orig + STEP;
            let plus = eval_loss(&probe, loss, inputs, targets)?;
            probe.layers[li].b[r] = orig - STEP;
            let minus = eval_loss(&probe, loss, inputs, targets)?;
            probe.layers[li].b[r] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            let a = analytic.layers[li].b[r];
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok(worst)
}

fn eval_loss(
    net: &DenseNet,
    loss: Loss,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<f64> {
    let cache = net.forward_cache(inputs);
    loss.value(inputs, cache.output().view(), targets)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Architecture spec handed to cross-validation so each candidate starts
/// from its own seeded initialization.
#[derive(Debug, Clone)]
pub struct NetArch {
    pub dims: Vec<usize>,
    pub output_activation: Activation,
}

/// Seeded k-fold cross-validation over a config grid; returns the config
/// with the smallest mean held-out loss, ties broken by grid order.
pub fn cross_validate(
    arch: &NetArch,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: Loss,
    grid: &[TrainConfig],
    folds: usize,
    seed: u64,
) -> Result<TrainConfig> {
    cross_validate_with(arch, inputs, targets, loss, grid, folds, seed, |_| identity_batch_map)
}

/// Cross-validation with a per-run batch transform; `map_factory` is called
/// once per training run. Held-out batches are mapped with a fold-specific
/// stream so every config sees the same validation draw.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate_with<F, M>(
    arch: &NetArch,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    loss: Loss,
    grid: &[TrainConfig],
    folds: usize,
    seed: u64,
    mut map_factory: F,
) -> Result<TrainConfig>
where
    F: FnMut(u64) -> M,
    M: FnMut(&mut ChaCha8Rng, Array2<f64>, Array2<f64>) -> (Array2<f64>, Array2<f64>),
{
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok(grid[0].clone());
    }
    let n = inputs.nrows();
    if folds < 2 || folds > n {
        return Err(Error::InvalidParam(format!(
            "need 2 <= folds <= n, got folds = {folds}, n = {n}"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, &[0x6376_666f]);
    order.shuffle(&mut rng);
    let fold_of: Vec<usize> = (0..n).map(|pos| pos % folds).collect();

    let mut best: Option<(f64, usize)> = None;
    for (ci, cfg) in grid.iter().enumerate() {
        cfg.validate()?;
        let mut total = 0.0;
        for fold in 0..folds {
            let mut train_idx = Vec::new();
            let mut val_idx = Vec::new();
            for (pos, &row) in order.iter().enumerate() {
                if fold_of[pos] == fold {
                    val_idx.push(row);
                } else {
                    train_idx.push(row);
                }
            }
            let tr_x = inputs.select(Axis(0), &train_idx);
            let tr_t = targets.select(Axis(0), &train_idx);
            let run_seed = crate::rng::mix_seed(seed, &[fold as u64, ci as u64]);
            let net = DenseNet::new(&arch.dims, arch.output_activation, run_seed)?;
            let run_cfg = cfg.clone().with_seed(run_seed);
            let outcome =
                train_network_with(net, &tr_x, &tr_t, loss, &run_cfg, map_factory(run_seed))?;

            let va_x = inputs.select(Axis(0), &val_idx);
            let va_t = targets.select(Axis(0), &val_idx);
            // validation draw depends only on the fold, not the config
            let mut val_rng = stream_rng(seed, &[0x6376_7661, fold as u64]);
            let (va_x, va_t) = map_factory(run_seed)(&mut val_rng, va_x, va_t);
            let out = outcome.net.forward_cache(va_x.view());
            total += loss.value(va_x.view(), out.output().view(), va_t.view())?;
        }
        let mean = total / folds as f64;
        if best.is_none_or(|(b, _)| mean < b) {
            best = Some((mean, ci));
        }
    }
    Ok(grid[best.expect("non-empty grid").1].clone())
}

/// Knobs for [`train_regressor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorOptions {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    pub folds: usize,
}

impl Default for RegressorOptions {
    fn default() -> Self {
        RegressorOptions {
            hidden: vec![64, 64, 64],
            epochs: 300,
            batch_size: 32,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            wd_grid: vec![0.0, 0.025],
            folds: 5,
        }
    }
}

impl RegressorOptions {
    pub fn grid(&self, epochs: usize, batch_size: usize) -> Vec<TrainConfig> {
        let mut grid = Vec::new();
        for &lr in &self.lr_grid {
            for &wd in &self.wd_grid {
                grid.push(TrainConfig {
                    learning_rate: lr,
                    weight_decay: wd,
                    epochs,
                    batch_size,
                    ..TrainConfig::default()
                });
            }
        }
        grid
    }
}

/// Trains the point regressor (ReLU stack, identity scalar output, MSE)
/// with the learning rate and weight decay cross-validated over the grid.
/// Expects standardized training data.
pub fn train_regressor(
    train: &Dataset,
    opts: &RegressorOptions,
    seed: u64,
) -> Result<(NetRegressor, TrainConfig)> {
    let mut dims = vec![train.n_features()];
    dims.extend_from_slice(&opts.hidden);
    dims.push(1);
    let arch = NetArch { dims, output_activation: Activation::Identity };
    let inputs = train.features().clone();
    let targets = targets_column(train);
    let grid = opts.grid(opts.epochs, opts.batch_size.min(train.n_rows()));
    let folds = opts.folds.min(train.n_rows());
    let best = cross_validate(&arch, &inputs, &targets, Loss::Mse, &grid, folds, seed)?;
    let final_seed = crate::rng::mix_seed(seed, &[0x6669_6e61]);
    let net = DenseNet::new(&arch.dims, arch.output_activation, final_seed)?;
    let outcome = train_network(
        net,
        &inputs,
        &targets,
        Loss::Mse,
        &best.clone().with_seed(final_seed),
    )?;
    Ok((NetRegressor { net: outcome.net }, best))
}

/// Targets as an `n x 1` matrix, the shape the losses expect.
pub fn targets_column(ds: &Dataset) -> Array2<f64> {
    ds.targets().view().insert_axis(Axis(1)).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::TauSource;
    use crate::rng::stream_rng;
    use ndarray::Array1;
    use rand::Rng;

    fn linear_data(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = stream_rng(seed, &[1]);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-2.0..2.0));
        let y = x.mapv(|v| 2.0 * v + 1.0);
        (x, y)
    }

    #[test]
    fn learns_noiseless_linear_function() {
        let (x, y) = linear_data(200, 3);
        let net = DenseNet::new(&[1, 16, 1], Activation::Identity, 5).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 400, ..TrainConfig::default() };
        let outcome = train_network(net, &x, &y, Loss::Mse, &cfg).unwrap();
        let final_mse = *outcome.epoch_losses.last().unwrap();
        assert!(final_mse < 1e-3, "final mse {final_mse}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (x, y) = linear_data(50, 1);
        let net = DenseNet::new(&[1, 8, 1], Activation::Identity, 2).unwrap();
        let before = net.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 5, ..TrainConfig::default() };
        let outcome = train_network(net, &x, &y, Loss::Mse, &cfg).unwrap();
        for (a, b) in outcome.net.layers.iter().zip(&before.layers) {
            assert_eq!(a.w, b.w);
            assert_eq!(a.b, b.b);
        }
        let first = outcome.epoch_losses[0];
        assert!(outcome.epoch_losses.iter().all(|&l| (l - first).abs() < 1e-12));
    }

    #[test]
    fn pinball_median_tracks_conditional_median_not_mean() {
        // asymmetric noise: y = exp(z) with z standard normal has
        // median 1 and mean exp(0.5) ~ 1.65
        let n = 4000;
        let mut rng = stream_rng(11, &[7]);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(-1.0..1.0));
        let y = Array2::from_shape_fn((n, 1), |_| {
            crate::rng::standard_normal(&mut rng).exp()
        });
        let net = DenseNet::new(&[1, 16, 1], Activation::Identity, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            epochs: 200,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let outcome = train_network(
            net,
            &x,
            &y,
            Loss::Pinball { tau: TauSource::Fixed(0.5) },
            &cfg,
        )
        .unwrap();
        let grid = Array2::from_shape_fn((21, 1), |(i, _)| -0.9 + 0.09 * i as f64);
        let preds = outcome.net.forward_cache(grid.view());
        // sample median oracle: median of y over all x (independent of x)
        let mut ys: Vec<f64> = y.column(0).to_vec();
        ys.sort_by(f64::total_cmp);
        let sample_median = ys[ys.len() / 2];
        for &p in preds.output().column(0) {
            assert!(
                (p - sample_median).abs() < 0.25,
                "prediction {p} far from sample median {sample_median}"
            );
        }
        let mean = y.column(0).mean().unwrap();
        let avg_pred = preds.output().column(0).mean().unwrap();
        assert!((avg_pred - mean).abs() > 0.3, "median fit {avg_pred} drifted to mean {mean}");
    }

    #[test]
    fn nan_loss_reports_location() {
        let (x, y) = linear_data(20, 1);
        let net = DenseNet::new(&[1, 4, 1], Activation::Identity, 2).unwrap();
        let cfg = TrainConfig { learning_rate: 1e100, epochs: 3, ..TrainConfig::default() };
        let err = train_network(net, &x, &y, Loss::Mse, &cfg).unwrap_err();
        assert!(matches!(err, Error::NanLoss { .. }), "{err}");
    }

    #[test]
    fn full_batch_mse_loss_mostly_nonincreasing_at_small_lr() {
        let (x, y) = linear_data(64, 5);
        let net = DenseNet::new(&[1, 8, 1], Activation::Identity, 6).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let outcome = train_network(net, &x, &y, Loss::Mse, &cfg).unwrap();
        let violations = outcome
            .epoch_losses
            .windows(2)
            .filter(|w| w[1] > w[0] + 1e-12)
            .count();
        assert!(violations <= 1, "losses {:?}", outcome.epoch_losses);
    }

    #[test]
    fn cross_validate_single_config_skips_search() {
        let (x, y) = linear_data(30, 2);
        let arch = NetArch { dims: vec![1, 4, 1], output_activation: Activation::Identity };
        let cfg = TrainConfig { learning_rate: 0.5, epochs: 1, ..TrainConfig::default() };
        let best =
            cross_validate(&arch, &x, &y, Loss::Mse, std::slice::from_ref(&cfg), 5, 0).unwrap();
        assert_eq!(best, cfg);
    }

    #[test]
    fn cross_validate_prefers_learning_over_frozen() {
        let (x, y) = linear_data(60, 4);
        let arch = NetArch { dims: vec![1, 8, 1], output_activation: Activation::Identity };
        let frozen = TrainConfig { learning_rate: 0.0, epochs: 60, ..TrainConfig::default() };
        let live = TrainConfig { learning_rate: 1e-2, epochs: 60, ..TrainConfig::default() };
        let grid = vec![frozen, live.clone()];
        let best = cross_validate(&arch, &x, &y, Loss::Mse, &grid, 3, 1).unwrap();
        assert_eq!(best, live);
    }

    #[test]
    fn cross_validate_is_deterministic() {
        let (x, y) = linear_data(40, 9);
        let arch = NetArch { dims: vec![1, 4, 1], output_activation: Activation::Identity };
        let grid = vec![
            TrainConfig { learning_rate: 1e-2, epochs: 20, ..TrainConfig::default() },
            TrainConfig { learning_rate: 1e-3, epochs: 20, ..TrainConfig::default() },
        ];
        let a = cross_validate(&arch, &x, &y, Loss::Mse, &grid, 4, 7).unwrap();
        let b = cross_validate(&arch, &x, &y, Loss::Mse, &grid, 4, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cross_validate_rejects_empty_grid() {
        let (x, y) = linear_data(10, 0);
        let arch = NetArch { dims: vec![1, 2, 1], output_activation: Activation::Identity };
        assert!(matches!(
            cross_validate(&arch, &x, &y, Loss::Mse, &[], 2, 0),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn regressor_fits_constant_target() {
        let x = Array2::from_shape_fn((40, 2), |(i, j)| (i as f64 * 0.1) - j as f64);
        let y = Array1::from_elem(40, 3.5);
        let ds = Dataset::new(x, y, None).unwrap();
        let opts = RegressorOptions {
            hidden: vec![8],
            epochs: 500,
            lr_grid: vec![1e-2],
            wd_grid: vec![0.0],
            folds: 2,
            batch_size: 16,
        };
        let (reg, _) = train_regressor(&ds, &opts, 0).unwrap();
        let preds = crate::Regressor::predict_batch(&reg, ds.features().view());
        for p in preds {
            assert!((p - 3.5).abs() < 0.1, "prediction {p}");
        }
    }
}
