//! Diversity discriminators: a learned symmetric dissimilarity over paired
//! discrepancy draws separates inputs where the regressor is reliable from
//! inputs where it is not.
//!
//! The diversity of an input is `H(x) = E[h(D1, D2)]` over two independent
//! draws of the discrepancy at `x`, estimated by Monte Carlo with the
//! fitted conditional law as the generative model. Training minimizes the
//! mean diversity on empirically good rows minus the mean on bad rows,
//! with gradients flowing only through `h`; the estimator stays frozen.

use ndarray::{Array2, ArrayView1};
use rand_chacha::ChaCha8Rng;

use super::{DiscrepancyKind, DiscrepancySpec};
use crate::data::Dataset;
use crate::estimators::{normal_quantile, CondEstimator, PointDistribution};
use crate::nn::{forward, AdamState, Activation, DenseNet, Gradients, Loss, TrainConfig};
use crate::rng::{mix_seed, open_unit, stream_rng};
use crate::{Error, Regressor, Result};

const TAG_SPLIT: u64 = 0x6476_7370;
const TAG_INIT: u64 = 0x6476_696e;
const TAG_SAMPLE: u64 = 0x6476_7361;
const TAG_ROWS: u64 = 0x6476_726f;
const TAG_VAL: u64 = 0x6476_7661;
const TAG_FINAL: u64 = 0x6476_6669;

/// A symmetric dissimilarity over pairs of nonnegative discrepancies,
/// mapping into the unit interval.
pub trait Dissimilarity: Sync {
    /// Elementwise `h(u_i, v_i)`.
    fn eval_pairs(&self, u: &[f64], v: &[f64]) -> Vec<f64>;
}

/// The indicator-product dissimilarity `1{u > eps} 1{v > eps}`, under
/// which the diversity equals the squared exceedance probability.
pub struct HpIndicator {
    pub epsilon: f64,
}

impl Dissimilarity for HpIndicator {
    fn eval_pairs(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(v)
            .map(|(&a, &b)| {
                if a > self.epsilon && b > self.epsilon {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }
}

///`(u - v)^2 / scale`, clamped into the unit interval; with a large enough
/// scale the clamp never engages and the diversity recovers twice the
/// variance of the sampled population (times `1/scale`).
pub struct ScaledSquaredDiff {
    pub scale: f64,
}

impl Dissimilarity for ScaledSquaredDiff {
    fn eval_pairs(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(v)
            .map(|(&a, &b)| ((a - b).powi(2) / self.scale).min(1.0))
            .collect()
    }
}

/// A constant dissimilarity (test fixture).
pub struct ConstantH(pub f64);

impl Dissimilarity for ConstantH {
    fn eval_pairs(&self, u: &[f64], _v: &[f64]) -> Vec<f64> {
        vec![self.0; u.len()]
    }
}

/// The learned dissimilarity: a dense network with two inputs and a
/// sigmoid output, always evaluated symmetrically by averaging the two
/// argument orders.
#[derive(Debug, Clone)]
pub struct HNet {
    pub net: DenseNet,
}

impl HNet {
    pub fn new(hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = vec![2];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(HNet { net: DenseNet::new(&dims, Activation::Sigmoid, seed)? })
    }

    pub fn eval_pair(&self, u: f64, v: f64) -> f64 {
        symmetrize(&self.net, u, v)
    }
}

impl Dissimilarity for HNet {
    fn eval_pairs(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut inputs = Array2::zeros((2 * n, 2));
        for i in 0..n {
            inputs[[i, 0]] = u[i];
            inputs[[i, 1]] = v[i];
            inputs[[n + i, 0]] = v[i];
            inputs[[n + i, 1]] = u[i];
        }
        let out = forward(&self.net, inputs.view()).expect("2-input network");
        (0..n).map(|i| 0.5 * (out[[i, 0]] + out[[n + i, 0]])).collect()
    }
}

/// `(g(u, v) + g(v, u)) / 2` for a two-input network `g`; exactly
/// symmetric in its arguments.
pub fn symmetrize(net: &DenseNet, u: f64, v: f64) -> f64 {
    let inputs = ndarray::array![[u, v], [v, u]];
    let out = net.forward_cache(inputs.view());
    0.5 * (out.output()[[0, 0]] + out.output()[[1, 0]])
}

/// Draws discrepancy samples at one fixed input.
pub enum DiscrepancySampler {
    /// Sample the target law and map through `d(y, f(x))`.
    FromY { dist: PointDistribution, prediction: f64, kind: DiscrepancyKind },
    /// Sample a discrepancy estimator directly.
    FromD { dist: PointDistribution },
    /// The synthetic model's exact error law `|b + sigma Z|`.
    OracleAbs { bias: f64, sigma: f64 },
}

impl DiscrepancySampler {
    pub fn from_y_estimator(
        est: &CondEstimator,
        regressor: &dyn Regressor,
        x: ArrayView1<f64>,
        kind: DiscrepancyKind,
    ) -> Result<Self> {
        let prediction = regressor.predict_one(x);
        if kind == DiscrepancyKind::Relative && prediction.abs() <= 1e-8 {
            return Err(Error::RelativeNearZero { rows: vec![] });
        }
        Ok(DiscrepancySampler::FromY { dist: est.at(x)?, prediction, kind })
    }

    pub fn from_d_estimator(est: &CondEstimator, x: ArrayView1<f64>) -> Result<Self> {
        Ok(DiscrepancySampler::FromD { dist: est.at(x)? })
    }

    pub fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            DiscrepancySampler::FromY { dist, prediction, kind } => {
                dist.sample_into(rng, out);
                let denom = match kind {
                    DiscrepancyKind::Absolute => 1.0,
                    DiscrepancyKind::Relative => prediction.abs(),
                };
                for v in out.iter_mut() {
                    *v = (*v - prediction).abs() / denom;
                }
            }
            DiscrepancySampler::FromD { dist } => dist.sample_into(rng, out),
            DiscrepancySampler::OracleAbs { bias, sigma } => {
                for v in out.iter_mut() {
                    let z = normal_quantile(open_unit(rng));
                    *v = (bias + sigma * z).abs();
                }
            }
        }
    }
}

/// Two independent length-`n_u` discrepancy streams, seeded.
pub fn draw_streams(
    sampler: &DiscrepancySampler,
    n_u: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, &[TAG_SAMPLE]);
    let mut u = vec![0.0; n_u];
    let mut v = vec![0.0; n_u];
    sampler.sample_into(&mut rng, &mut u);
    sampler.sample_into(&mut rng, &mut v);
    (u, v)
}

/// Monte Carlo diversity of two given streams: the mean of `h` over
/// index-aligned pairs.
pub fn diversity_of_streams(h: &dyn Dissimilarity, u: &[f64], v: &[f64]) -> f64 {
    let vals = h.eval_pairs(u, v);
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// `H(x)`: draws two independent sample streams at `x` and averages `h`
/// over the paired draws.
pub fn estimate_diversity(
    h: &dyn Dissimilarity,
    sampler: &DiscrepancySampler,
    n_u: usize,
    seed: u64,
) -> Result<f64> {
    if n_u == 0 {
        return Err(Error::InvalidParam("n_u must be >= 1".into()));
    }
    let (u, v) = draw_streams(sampler, n_u, seed);
    Ok(diversity_of_streams(h, &u, &v))
}

/// Which conditional law feeds the diversity sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DvVariant {
    /// Sample the target law and map through the discrepancy.
    Y,
    /// Sample a discrepancy estimator directly.
    D,
}

/// Hyperparameters for diversity training.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DvConfig {
    /// Monte Carlo pairs per input per update.
    pub n_u: usize,
    pub epochs: usize,
    pub lr_grid: Vec<f64>,
    /// Fraction of the training rows held out for learning-rate selection
    /// by validation AUROC.
    pub val_fraction: f64,
    pub hidden: Vec<usize>,
    /// Optional row-level minibatching: rows drawn per epoch (stratified
    /// over the good/bad classes). `None` uses every row each epoch.
    pub rows_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for DvConfig {
    fn default() -> Self {
        DvConfig {
            n_u: 2000,
            epochs: 25,
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            val_fraction: 0.2,
            hidden: vec![64, 64, 64, 64],
            rows_per_epoch: None,
            seed: 0,
        }
    }
}

/// A trained diversity function with its training diagnostics.
#[derive(Debug)]
pub struct DvOutcome {
    pub hnet: HNet,
    pub chosen_lr: f64,
    /// Separation loss per epoch (evaluated before each update).
    pub loss_trace: Vec<f64>,
    /// Loss at initialization (first entry of the trace).
    pub initial_loss: f64,
    /// Loss after the final update, on fresh streams.
    pub final_loss: f64,
    /// Validation AUROC of the selected run, when a two-class validation
    /// split was available.
    pub val_auroc: Option<f64>,
}

struct RowState {
    sampler: DiscrepancySampler,
    bad: bool,
}

/// Learns the dissimilarity `h` for a diversity discriminator.
///
/// Per epoch, every (selected) training row draws two fresh streams of
/// `n_u` discrepancy samples through the frozen estimator, the diversity
/// is averaged through the current symmetrized network, and one Adam step
/// minimizes `mean_good H - mean_bad H` (both halves weighted 1/2). The
/// learning rate is chosen on a held-out split by maximizing AUROC.
pub fn train_dv(
    est: &CondEstimator,
    regressor: &dyn Regressor,
    train: &Dataset,
    spec: &DiscrepancySpec,
    variant: DvVariant,
    cfg: &DvConfig,
) -> Result<DvOutcome> {
    if cfg.n_u == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParam("n_u and epochs must be positive".into()));
    }
    if !(0.0..0.9).contains(&cfg.val_fraction) {
        return Err(Error::InvalidParam("val_fraction must lie in [0, 0.9)".into()));
    }
    if cfg.lr_grid.is_empty() {
        return Err(Error::EmptyGrid);
    }

    let n = train.n_rows();
    let preds = regressor.predict_batch(train.features().view());
    let mut bad_flags = Vec::with_capacity(n);
    for (y, p) in train.targets().iter().zip(&preds) {
        bad_flags.push(super::discrepancy(*y, *p, spec.kind)? > spec.epsilon);
    }

    // held-out split for learning-rate selection
    let mut order: Vec<usize> = (0..n).collect();
    {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(cfg.seed, &[TAG_SPLIT]);
        order.shuffle(&mut rng);
    }
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).min(n.saturating_sub(2));
    let (val_idx, fit_idx) = order.split_at(n_val);

    let n_good = fit_idx.iter().filter(|&&i| !bad_flags[i]).count();
    let n_bad = fit_idx.len() - n_good;
    if n_good == 0 || n_bad == 0 {
        return Err(Error::DegeneratePartition(format!(
            "training split has {n_good} good and {n_bad} bad rows"
        )));
    }

    let build_sampler = |row: usize| -> Result<DiscrepancySampler> {
        let x = train.row(row);
        match variant {
            DvVariant::Y => DiscrepancySampler::from_y_estimator(est, regressor, x, spec.kind),
            DvVariant::D => DiscrepancySampler::from_d_estimator(est, x),
        }
    };
    let fit_rows: Vec<RowState> = fit_idx
        .iter()
        .map(|&i| Ok(RowState { sampler: build_sampler(i)?, bad: bad_flags[i] }))
        .collect::<Result<_>>()?;
    let val_rows: Vec<RowState> = val_idx
        .iter()
        .map(|&i| Ok(RowState { sampler: build_sampler(i)?, bad: bad_flags[i] }))
        .collect::<Result<_>>()?;
    let val_two_class =
        val_rows.iter().any(|r| r.bad) && val_rows.iter().any(|r| !r.bad);

    let mut best: Option<(f64, DvOutcome)> = None;
    for (li, &lr) in cfg.lr_grid.iter().enumerate() {
        let mut hnet = HNet::new(&cfg.hidden, mix_seed(cfg.seed, &[TAG_INIT, li as u64]))?;
        let mut adam = AdamState::new(&hnet.net);
        let train_cfg = TrainConfig {
            learning_rate: lr,
            epochs: cfg.epochs,
            ..TrainConfig::default()
        };
        let mut loss_trace = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            let selected = select_rows(&fit_rows, cfg.rows_per_epoch, cfg.seed, li, epoch);
            let loss = dv_epoch(
                &mut hnet.net,
                &mut adam,
                &train_cfg,
                &fit_rows,
                &selected,
                cfg.n_u,
                cfg.seed,
                &[TAG_SAMPLE, li as u64, epoch as u64],
                true,
            )?;
            loss_trace.push(loss);
        }
        // final loss on fresh streams, no update
        let all: Vec<usize> = (0..fit_rows.len()).collect();
        let final_loss = dv_epoch(
            &mut hnet.net,
            &mut adam,
            &train_cfg,
            &fit_rows,
            &all,
            cfg.n_u,
            cfg.seed,
            &[TAG_FINAL, li as u64],
            false,
        )?;

        let (selection, val_auroc) = if val_two_class {
            let mut scores = Vec::with_capacity(val_rows.len());
            let mut labels = Vec::with_capacity(val_rows.len());
            for (vi, row) in val_rows.iter().enumerate() {
                let seed = mix_seed(cfg.seed, &[TAG_VAL, li as u64, vi as u64]);
                scores.push(estimate_diversity(&hnet, &row.sampler, cfg.n_u, seed)?);
                labels.push(row.bad);
            }
            let a = crate::eval::auroc(&scores, &labels)?;
            (a, Some(a))
        } else {
            // no usable validation signal; prefer the lowest training loss
            (-final_loss, None)
        };

        let outcome = DvOutcome {
            hnet,
            chosen_lr: lr,
            initial_loss: loss_trace[0],
            final_loss,
            loss_trace,
            val_auroc,
        };
        if best.as_ref().is_none_or(|(s, _)| selection > *s) {
            best = Some((selection, outcome));
        }
    }
    Ok(best.expect("non-empty lr grid").1)
}

/// Stratified row selection for one epoch; keeps at least one row of each
/// class when minibatching.
fn select_rows(
    rows: &[RowState],
    rows_per_epoch: Option<usize>,
    seed: u64,
    lr_index: usize,
    epoch: usize,
) -> Vec<usize> {
    let k = match rows_per_epoch {
        None => return (0..rows.len()).collect(),
        Some(k) if k >= rows.len() => return (0..rows.len()).collect(),
        Some(k) => k.max(2),
    };
    use rand::seq::SliceRandom;
    let mut rng = stream_rng(seed, &[TAG_ROWS, lr_index as u64, epoch as u64]);
    let mut good: Vec<usize> = (0..rows.len()).filter(|&i| !rows[i].bad).collect();
    let mut bad: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].bad).collect();
    good.shuffle(&mut rng);
    bad.shuffle(&mut rng);
    let k_bad = ((k * bad.len()) as f64 / rows.len() as f64).round() as usize;
    let k_bad = k_bad.clamp(1, k - 1).min(bad.len());
    let k_good = (k - k_bad).min(good.len());
    let mut selected: Vec<usize> = bad[..k_bad].iter().chain(&good[..k_good]).copied().collect();
    selected.sort_unstable();
    selected
}

/// One full-batch diversity update: accumulates the separation loss and
/// its gradient over every selected row's symmetrized sample pairs in
/// bounded chunks, then (optionally) applies a single Adam step.
#[allow(clippy::too_many_arguments)]
fn dv_epoch(
    net: &mut DenseNet,
    adam: &mut AdamState,
    cfg: &TrainConfig,
    rows: &[RowState],
    selected: &[usize],
    n_u: usize,
    seed: u64,
    stream_tags: &[u64],
    update: bool,
) -> Result<f64> {
    const CHUNK: usize = 8192;
    let n_good = selected.iter().filter(|&&i| !rows[i].bad).count();
    let n_bad = selected.len() - n_good;
    debug_assert!(n_good > 0 && n_bad > 0);

    let mut total_loss = 0.0;
    let mut acc: Option<Gradients> = None;
    let mut inputs = Array2::zeros((CHUNK, 2));
    let mut weights = Array2::zeros((CHUNK, 1));
    let mut filled = 0usize;
    let mut u = vec![0.0; n_u];
    let mut v = vec![0.0; n_u];

    let flush = |inputs: &Array2<f64>,
                     weights: &Array2<f64>,
                     filled: usize,
                     net: &DenseNet,
                     acc: &mut Option<Gradients>,
                     total_loss: &mut f64|
     -> Result<()> {
        if filled == 0 {
            return Ok(());
        }
        let bx = inputs.slice(ndarray::s![..filled, ..]);
        let bw = weights.slice(ndarray::s![..filled, ..]);
        let cache = net.forward_cache(bx);
        let (value, output_grad) =
            Loss::DvSeparation.eval(bx, cache.output().view(), bw)?;
        if !value.is_finite() {
            return Err(Error::NanLoss { epoch: 0, batch: 0, loss: value });
        }
        let grads = net.backward(bx, &cache, &output_grad);
        match acc {
            Some(a) => a.add_assign(&grads),
            None => *acc = Some(grads),
        }
        *total_loss += value;
        Ok(())
    };

    for &ri in selected {
        let row = &rows[ri];
        // fresh streams per row per epoch
        let mut rng = stream_rng(seed, &[stream_tags, &[ri as u64]].concat());
        row.sampler.sample_into(&mut rng, &mut u);
        row.sampler.sample_into(&mut rng, &mut v);
        let class_weight = if row.bad {
            -0.5 / n_bad as f64
        } else {
            0.5 / n_good as f64
        };
        let pair_weight = class_weight / (2.0 * n_u as f64);
        for i in 0..n_u {
            // two symmetrized replicas per Monte Carlo pair
            for &(a, b) in &[(u[i], v[i]), (v[i], u[i])] {
                inputs[[filled, 0]] = a;
                inputs[[filled, 1]] = b;
                weights[[filled, 0]] = pair_weight;
                filled += 1;
                if filled == CHUNK {
                    flush(&inputs, &weights, filled, net, &mut acc, &mut total_loss)?;
                    filled = 0;
                }
            }
        }
    }
    flush(&inputs, &weights, filled, net, &mut acc, &mut total_loss)?;

    if update {
        if let Some(grads) = acc {
            adam.step(net, &grads, cfg);
        }
        if !net.all_finite() {
            return Err(Error::NanLoss { epoch: 0, batch: 0, loss: f64::NAN });
        }
    }
    Ok(total_loss)
}

/// Scores one input with a trained diversity function.
#[allow(clippy::too_many_arguments)]
pub fn dv_score(
    h: &HNet,
    est: &CondEstimator,
    regressor: &dyn Regressor,
    x: ArrayView1<f64>,
    spec: &DiscrepancySpec,
    variant: DvVariant,
    n_u: usize,
    seed: u64,
) -> Result<f64> {
    let sampler = match variant {
        DvVariant::Y => DiscrepancySampler::from_y_estimator(est, regressor, x, spec.kind)?,
        DvVariant::D => DiscrepancySampler::from_d_estimator(est, x)?,
    };
    estimate_diversity(h, &sampler, n_u, seed)
}
