//! Conditional-distribution estimation for the target `Y|X=x` and for the
//! discrepancy `D|X=x`, behind a uniform cdf / quantile / sample contract.
//!
//! Three estimator families are provided: an ensemble of conditional
//! Gaussians trained by Gaussian NLL, simultaneous quantile regression
//! (one network over `(x, tau)` trained with the pinball loss at random
//! levels), and a conditional Gaussian mixture trained by mixture NLL.
//! Evaluating an estimator at a fixed input yields a
//! [`PointDistribution`], where all the distribution arithmetic lives.

use ndarray::{Array2, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::gauss::{normal_cdf, normal_quantile};

use crate::data::Dataset;
use crate::detectors::{discrepancy, DiscrepancyKind};
use crate::nn::{
    cross_validate_with, targets_column, train_network_with, Activation, DenseNet, Loss, NetArch,
    TauSource, TrainConfig,
};
use crate::rng::{mix_seed, open_unit, stream_rng};
use crate::{Affine, Error, Regressor, Result};

/// Support of the modeled variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetDomain {
    RealLine,
    Nonnegative,
}

/// Which estimator family to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    CondGaussian,
    Sqr,
    CondMixture,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EstimatorKind::CondGaussian => "CG",
            EstimatorKind::Sqr => "SQR",
            EstimatorKind::CondMixture => "MIX",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub(crate) enum EstimatorModel {
    Gaussian { members: Vec<DenseNet>, sigma_floor: f64 },
    Sqr { net: DenseNet, tau_grid: usize },
    Mixture { net: DenseNet, modes: usize, sigma_floor: f64, nonneg_means: bool },
}

/// A trained conditional-distribution estimator. Inputs are expected in
/// the same feature space the estimator was fitted on; outputs are mapped
/// through `target_affine` (identity unless the estimator was
/// destandardized).
#[derive(Debug)]
pub struct CondEstimator {
    pub(crate) model: EstimatorModel,
    pub domain: TargetDomain,
    pub target_affine: Affine,
}

/// Hyperparameters shared by the estimator fits; use the per-kind
/// constructors for the defaults each family was specified with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_grid: Vec<f64>,
    pub wd_grid: Vec<f64>,
    pub folds: usize,
    pub sigma_floor: f64,
    /// Conditional-Gaussian ensemble size.
    pub ensemble: usize,
    /// Mixture mode count.
    pub modes: usize,
    /// Quantile-grid resolution for SQR evaluation.
    pub tau_grid: usize,
}

impl EstimatorOptions {
    pub fn cond_gaussian() -> Self {
        EstimatorOptions {
            hidden: vec![64],
            epochs: 150,
            batch_size: 32,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            wd_grid: vec![0.0],
            folds: 5,
            sigma_floor: 1e-4,
            ensemble: 4,
            modes: 0,
            tau_grid: 513,
        }
    }

    pub fn sqr() -> Self {
        EstimatorOptions {
            hidden: vec![64, 64, 64],
            epochs: 500,
            batch_size: 32,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            wd_grid: vec![0.0, 0.025],
            folds: 5,
            sigma_floor: 1e-4,
            ensemble: 1,
            modes: 0,
            tau_grid: 513,
        }
    }

    pub fn mixture() -> Self {
        EstimatorOptions {
            hidden: vec![64],
            epochs: 500,
            batch_size: 32,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            wd_grid: vec![0.0, 0.025],
            folds: 5,
            sigma_floor: 1e-4,
            ensemble: 1,
            modes: 16,
            tau_grid: 513,
        }
    }

    pub fn default_for(kind: EstimatorKind) -> Self {
        match kind {
            EstimatorKind::CondGaussian => Self::cond_gaussian(),
            EstimatorKind::Sqr => Self::sqr(),
            EstimatorKind::CondMixture => Self::mixture(),
        }
    }

    fn grid(&self) -> Vec<TrainConfig> {
        let mut grid = Vec::new();
        for &lr in &self.lr_grid {
            for &wd in &self.wd_grid {
                grid.push(TrainConfig {
                    learning_rate: lr,
                    weight_decay: wd,
                    epochs: self.epochs,
                    batch_size: self.batch_size,
                    ..TrainConfig::default()
                });
            }
        }
        grid
    }
}

/// The conditional law at one input, in the estimator's public units.
#[derive(Debug, Clone)]
pub enum PointDistribution {
    /// A finite Gaussian mixture (covers both the CG ensemble and the
    /// mixture estimator).
    GaussianMix { weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
    /// A monotone quantile curve on an equally spaced tau grid.
    QuantileGrid { taus: Vec<f64>, values: Vec<f64> },
}

impl PointDistribution {
    pub fn cdf(&self, v: f64) -> f64 {
        match self {
            PointDistribution::GaussianMix { weights, means, stds } => weights
                .iter()
                .zip(means)
                .zip(stds)
                .map(|((w, m), s)| w * normal_cdf((v - m) / s))
                .sum(),
            PointDistribution::QuantileGrid { taus, values } => {
                let lo = values[0];
                let hi = values[values.len() - 1];
                if v < lo {
                    return 0.0;
                }
                if v >= hi {
                    return 1.0;
                }
                // bisection in tau over the piecewise-linear quantile curve
                let (mut a, mut b) = (taus[0], taus[taus.len() - 1]);
                for _ in 0..100 {
                    if b - a <= 1e-6 {
                        break;
                    }
                    let mid = 0.5 * (a + b);
                    if grid_quantile(taus, values, mid) <= v {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                0.5 * (a + b)
            }
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidParam(format!(
                "quantile level must lie in (0, 1), got {tau}"
            )));
        }
        match self {
            PointDistribution::GaussianMix { weights, means, stds } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for (m, s) in means.iter().zip(stds) {
                    lo = lo.min(m - 12.0 * s);
                    hi = hi.max(m + 12.0 * s);
                }
                let mut iterations = 0usize;
                for _ in 0..100 {
                    iterations += 1;
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < tau {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                        break;
                    }
                }
                let v = 0.5 * (lo + hi);
                let residual = (self.cdf(v) - tau).abs();
                if residual > 1e-6 {
                    return Err(Error::BisectionFailed { iterations, residual });
                }
                let _ = weights;
                Ok(v)
            }
            PointDistribution::QuantileGrid { taus, values } => {
                Ok(grid_quantile(taus, values, tau))
            }
        }
    }

    /// Seedable sampling; Gaussian components by inverse transform, the
    /// quantile grid by inverse-cdf of uniforms.
    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            PointDistribution::GaussianMix { weights, means, stds } => {
                for slot in out.iter_mut() {
                    let pick: f64 = open_unit(rng);
                    let mut acc = 0.0;
                    let mut idx = weights.len() - 1;
                    for (k, w) in weights.iter().enumerate() {
                        acc += w;
                        if pick <= acc {
                            idx = k;
                            break;
                        }
                    }
                    let z = normal_quantile(open_unit(rng));
                    *slot = means[idx] + stds[idx] * z;
                }
            }
            PointDistribution::QuantileGrid { taus, values } => {
                for slot in out.iter_mut() {
                    let u = open_unit(rng);
                    *slot = grid_quantile(taus, values, u);
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.sample_into(rng, &mut out);
        out
    }
}

/// Piecewise-linear interpolation of a monotone quantile curve; levels
/// outside the grid clamp to the end values.
fn grid_quantile(taus: &[f64], values: &[f64], tau: f64) -> f64 {
    let g = taus.len();
    if tau <= taus[0] {
        return values[0];
    }
    if tau >= taus[g - 1] {
        return values[g - 1];
    }
    // equally spaced grid: direct index
    let step = taus[1] - taus[0];
    let pos = (tau - taus[0]) / step;
    let i = (pos.floor() as usize).min(g - 2);
    let frac = pos - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

fn tau_grid(g: usize) -> Vec<f64> {
    (1..=g).map(|j| j as f64 / (g + 1) as f64).collect()
}

impl CondEstimator {
    pub fn kind(&self) -> EstimatorKind {
        match self.model {
            EstimatorModel::Gaussian { .. } => EstimatorKind::CondGaussian,
            EstimatorModel::Sqr { .. } => EstimatorKind::Sqr,
            EstimatorModel::Mixture { .. } => EstimatorKind::CondMixture,
        }
    }

    /// Builds a conditional-Gaussian estimator from explicit member
    /// networks (each mapping features to `(mu, raw sigma)`).
    pub fn from_gaussian_members(
        members: Vec<DenseNet>,
        sigma_floor: f64,
        domain: TargetDomain,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidParam("ensemble must be non-empty".into()));
        }
        Ok(CondEstimator {
            model: EstimatorModel::Gaussian { members, sigma_floor },
            domain,
            target_affine: Affine::IDENTITY,
        })
    }

    /// Builds an SQR estimator from an explicit quantile network over
    /// `(features..., tau)`.
    pub fn from_sqr_net(net: DenseNet, tau_grid: usize, domain: TargetDomain) -> Result<Self> {
        if tau_grid < 2 {
            return Err(Error::InvalidParam("tau grid needs at least 2 points".into()));
        }
        Ok(CondEstimator {
            model: EstimatorModel::Sqr { net, tau_grid },
            domain,
            target_affine: Affine::IDENTITY,
        })
    }

    /// Builds a mixture estimator from an explicit network mapping features
    /// to `modes` logits, means and raw scales.
    pub fn from_mixture_net(
        net: DenseNet,
        modes: usize,
        sigma_floor: f64,
        domain: TargetDomain,
    ) -> Result<Self> {
        if modes == 0 {
            return Err(Error::InvalidParam("mixture needs at least one mode".into()));
        }
        Ok(CondEstimator {
            model: EstimatorModel::Mixture {
                net,
                modes,
                sigma_floor,
                nonneg_means: domain == TargetDomain::Nonnegative,
            },
            domain,
            target_affine: Affine::IDENTITY,
        })
    }

    /// The same estimator reporting in `outer`-transformed units (e.g. raw
    /// target units when the fit ran on standardized data).
    pub fn with_target_affine(&self, outer: Affine) -> CondEstimator {
        let inner = self.target_affine;
        CondEstimator {
            model: self.model.clone_model(),
            domain: self.domain,
            target_affine: Affine {
                scale: outer.scale * inner.scale,
                shift: outer.scale * inner.shift + outer.shift,
            },
        }
    }

    /// The conditional law at `x`.
    pub fn at(&self, x: ArrayView1<f64>) -> Result<PointDistribution> {
        let affine = self.target_affine;
        match &self.model {
            EstimatorModel::Gaussian { members, sigma_floor } => {
                let n = members.len();
                let mut weights = Vec::with_capacity(n);
                let mut means = Vec::with_capacity(n);
                let mut stds = Vec::with_capacity(n);
                let xs = x.insert_axis(Axis(0));
                for member in members {
                    let out = crate::nn::forward(member, xs)?;
                    let mu = out[[0, 0]];
                    let sigma = crate::nn::softplus(out[[0, 1]]) + sigma_floor;
                    weights.push(1.0 / n as f64);
                    means.push(affine.apply(mu));
                    stds.push(sigma * affine.scale);
                }
                Ok(PointDistribution::GaussianMix { weights, means, stds })
            }
            EstimatorModel::Sqr { net, tau_grid } => {
                let taus = tau_grid_for(*tau_grid);
                let k = x.len();
                let mut inputs = Array2::zeros((taus.len(), k + 1));
                for (mut row, &tau) in inputs.rows_mut().into_iter().zip(&taus) {
                    for (j, &v) in x.iter().enumerate() {
                        row[j] = v;
                    }
                    row[k] = tau;
                }
                let out = crate::nn::forward(net, inputs.view())?;
                let mut values: Vec<f64> = out.column(0).iter().map(|&v| affine.apply(v)).collect();
                // monotone rearrangement: quantile curves may cross
                values.sort_by(f64::total_cmp);
                Ok(PointDistribution::QuantileGrid { taus, values })
            }
            EstimatorModel::Mixture { net, modes, sigma_floor, nonneg_means } => {
                let m = *modes;
                let xs = x.insert_axis(Axis(0));
                let out = crate::nn::forward(net, xs)?;
                let max_logit = (0..m).map(|k| out[[0, k]]).fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = (0..m).map(|k| (out[[0, k]] - max_logit).exp()).collect();
                let total: f64 = exps.iter().sum();
                let weights: Vec<f64> = exps.iter().map(|e| e / total).collect();
                let means: Vec<f64> = (0..m)
                    .map(|k| {
                        let raw = out[[0, m + k]];
                        let mu = if *nonneg_means { crate::nn::softplus(raw) } else { raw };
                        affine.apply(mu)
                    })
                    .collect();
                let stds: Vec<f64> = (0..m)
                    .map(|k| (crate::nn::softplus(out[[0, 2 * m + k]]) + sigma_floor) * affine.scale)
                    .collect();
                Ok(PointDistribution::GaussianMix { weights, means, stds })
            }
        }
    }

    pub fn cdf(&self, v: f64, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.at(x)?.cdf(v))
    }

    pub fn quantile(&self, tau: f64, x: ArrayView1<f64>) -> Result<f64> {
        self.at(x)?.quantile(tau)
    }

    pub fn sample(&self, x: ArrayView1<f64>, n: usize, seed: u64) -> Result<Vec<f64>> {
        let dist = self.at(x)?;
        let mut rng = stream_rng(seed, &[0x6573_616d]);
        Ok(dist.sample(&mut rng, n))
    }
}

impl EstimatorModel {
    fn clone_model(&self) -> EstimatorModel {
        match self {
            EstimatorModel::Gaussian { members, sigma_floor } => EstimatorModel::Gaussian {
                members: members.clone(),
                sigma_floor: *sigma_floor,
            },
            EstimatorModel::Sqr { net, tau_grid } => {
                EstimatorModel::Sqr { net: net.clone(), tau_grid: *tau_grid }
            }
            EstimatorModel::Mixture { net, modes, sigma_floor, nonneg_means } => {
                EstimatorModel::Mixture {
                    net: net.clone(),
                    modes: *modes,
                    sigma_floor: *sigma_floor,
                    nonneg_means: *nonneg_means,
                }
            }
        }
    }
}

fn tau_grid_for(g: usize) -> Vec<f64> {
    tau_grid(g)
}

/// Fits the conditional-Gaussian ensemble: each member has one hidden
/// layer, two outputs `(mu, raw sigma)`, and is trained by Gaussian NLL;
/// the ensemble cdf is the equal-weight average of member cdfs.
pub fn fit_cond_gaussian(
    train: &Dataset,
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<CondEstimator> {
    fit_cond_gaussian_in(train, opts, seed, TargetDomain::RealLine)
}

fn fit_cond_gaussian_in(
    train: &Dataset,
    opts: &EstimatorOptions,
    seed: u64,
    domain: TargetDomain,
) -> Result<CondEstimator> {
    if opts.ensemble == 0 {
        return Err(Error::InvalidParam("ensemble size must be >= 1".into()));
    }
    let loss = Loss::GaussianNll { sigma_floor: opts.sigma_floor };
    let mut dims = vec![train.n_features()];
    dims.extend_from_slice(&opts.hidden);
    dims.push(2);
    let arch = NetArch { dims, output_activation: Activation::Identity };
    let inputs = train.features().clone();
    let targets = targets_column(train);
    let folds = opts.folds.min(train.n_rows());
    let best = cross_validate_with(&arch, &inputs, &targets, loss, &opts.grid(), folds, seed, |_| {
        crate::nn::identity_batch_map
    })?;

    let mut members = Vec::with_capacity(opts.ensemble);
    for member in 0..opts.ensemble {
        let member_seed = mix_seed(seed, &[0x6367_6d62, member as u64]);
        let net = DenseNet::new(&arch.dims, arch.output_activation, member_seed)?;
        let outcome = crate::nn::train_network(
            net,
            &inputs,
            &targets,
            loss,
            &best.clone().with_seed(member_seed),
        )?;
        members.push(outcome.net);
    }
    CondEstimator::from_gaussian_members(members, opts.sigma_floor, domain)
}

/// Appends a per-row quantile level drawn uniformly to the feature block;
/// the simultaneous-quantile-regression batch transform.
fn append_tau(
    rng: &mut ChaCha8Rng,
    inputs: Array2<f64>,
    targets: Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let n = inputs.nrows();
    let k = inputs.ncols();
    let mut with_tau = Array2::zeros((n, k + 1));
    with_tau.slice_mut(ndarray::s![.., ..k]).assign(&inputs);
    for i in 0..n {
        with_tau[[i, k]] = open_unit(rng);
    }
    (with_tau, targets)
}

/// Fits simultaneous quantile regression: the network maps `(x, tau)` to
/// the tau-quantile and trains with the pinball loss at a fresh uniform
/// tau per element per minibatch.
pub fn fit_sqr(train: &Dataset, opts: &EstimatorOptions, seed: u64) -> Result<CondEstimator> {
    fit_sqr_in(train, opts, seed, TargetDomain::RealLine)
}

fn fit_sqr_in(
    train: &Dataset,
    opts: &EstimatorOptions,
    seed: u64,
    domain: TargetDomain,
) -> Result<CondEstimator> {
    let loss = Loss::Pinball { tau: TauSource::LastInput };
    let output_activation = match domain {
        TargetDomain::RealLine => Activation::Identity,
        TargetDomain::Nonnegative => Activation::Softplus,
    };
    let mut dims = vec![train.n_features() + 1];
    dims.extend_from_slice(&opts.hidden);
    dims.push(1);
    let arch = NetArch { dims, output_activation };
    let inputs = train.features().clone();
    let targets = targets_column(train);
    let folds = opts.folds.min(train.n_rows());
    let best = cross_validate_with(&arch, &inputs, &targets, loss, &opts.grid(), folds, seed, |_| {
        append_tau
    })?;

    let final_seed = mix_seed(seed, &[0x7371_7266]);
    let net = DenseNet::new(&arch.dims, arch.output_activation, final_seed)?;
    let outcome = train_network_with(
        net,
        &inputs,
        &targets,
        loss,
        &best.with_seed(final_seed),
        append_tau,
    )?;
    CondEstimator::from_sqr_net(outcome.net, opts.tau_grid, domain)
}

/// Fits the conditional Gaussian mixture: one network maps `x` to mixture
/// logits, means and raw scales for `modes` components, trained by
/// mixture NLL; the cdf is the analytic weighted sum of Gaussian cdfs.
pub fn fit_mixture(train: &Dataset, opts: &EstimatorOptions, seed: u64) -> Result<CondEstimator> {
    fit_mixture_in(train, opts, seed, TargetDomain::RealLine)
}

fn fit_mixture_in(
    train: &Dataset,
    opts: &EstimatorOptions,
    seed: u64,
    domain: TargetDomain,
) -> Result<CondEstimator> {
    if opts.modes == 0 {
        return Err(Error::InvalidParam("mixture needs at least one mode".into()));
    }
    let nonneg_means = domain == TargetDomain::Nonnegative;
    let loss = Loss::MixtureNll {
        modes: opts.modes,
        sigma_floor: opts.sigma_floor,
        nonneg_means,
    };
    let mut dims = vec![train.n_features()];
    dims.extend_from_slice(&opts.hidden);
    dims.push(3 * opts.modes);
    let arch = NetArch { dims, output_activation: Activation::Identity };
    let inputs = train.features().clone();
    let targets = targets_column(train);
    let folds = opts.folds.min(train.n_rows());
    let best = cross_validate_with(&arch, &inputs, &targets, loss, &opts.grid(), folds, seed, |_| {
        crate::nn::identity_batch_map
    })?;

    let final_seed = mix_seed(seed, &[0x6d69_7866]);
    let net = DenseNet::new(&arch.dims, arch.output_activation, final_seed)?;
    let outcome = crate::nn::train_network(
        net,
        &inputs,
        &targets,
        loss,
        &best.with_seed(final_seed),
    )?;
    CondEstimator::from_mixture_net(outcome.net, opts.modes, opts.sigma_floor, domain)
}

/// Builds the discrepancy-sample dataset `{(x_i, d(y_i, f(x_i)))}` and fits
/// the chosen estimator on it with a nonnegative target domain.
pub fn fit_discrepancy_estimator(
    train: &Dataset,
    regressor: &dyn Regressor,
    d_kind: DiscrepancyKind,
    est_kind: EstimatorKind,
    opts: &EstimatorOptions,
    seed: u64,
) -> Result<CondEstimator> {
    let preds = regressor.predict_batch(train.features().view());
    if d_kind == DiscrepancyKind::Relative {
        let offending: Vec<usize> = preds
            .iter()
            .enumerate()
            .filter(|(_, p)| p.abs() <= 1e-8)
            .map(|(i, _)| i)
            .collect();
        if !offending.is_empty() {
            return Err(Error::RelativeNearZero { rows: offending });
        }
    }
    let mut ds = Vec::with_capacity(train.n_rows());
    for (y, p) in train.targets().iter().zip(&preds) {
        ds.push(discrepancy(*y, *p, d_kind)?);
    }
    let d_train = train.with_targets(ndarray::Array1::from_vec(ds))?;
    match est_kind {
        EstimatorKind::CondGaussian => {
            fit_cond_gaussian_in(&d_train, opts, seed, TargetDomain::Nonnegative)
        }
        EstimatorKind::Sqr => fit_sqr_in(&d_train, opts, seed, TargetDomain::Nonnegative),
        EstimatorKind::CondMixture => {
            fit_mixture_in(&d_train, opts, seed, TargetDomain::Nonnegative)
        }
    }
}
