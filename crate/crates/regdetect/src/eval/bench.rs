//! The experiment runner: for each (dataset, seed) cell, split,
//! standardize, train the regressor, fit the estimators the method list
//! needs, train the diversity discriminators, score the test set and
//! compute metrics per discrepancy kind and tolerance.
//!
//! Unit conventions: CSV pipelines standardize features everywhere and
//! model the standardized target ("work units"); absolute-kind scoring
//! stays in work units (the tolerance is divided by the training target
//! std), while relative-kind scoring destandardizes predictions and
//! estimators back to raw units, where the relative discrepancy is
//! defined. Toy pipelines run in raw units (the analytic regressor is
//! defined there) and are already unit-scaled.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;

use crate::config::{DatasetConfig, RunConfig};
use crate::data::{
    apply_standardizer, fit_standardizer, generate_toy, load_csv, split_dataset, Dataset,
    Direction, Standardizer,
};
use crate::detectors::{
    discrepancy, dv_score, DiscrepancyKind, DiscrepancySpec, DvVariant, HNet, MethodTag,
    OracleModel, {pb_baseline_d, pb_baseline_y}, {ConformalScorer, DvConfig},
};
use crate::estimators::{
    fit_cond_gaussian, fit_discrepancy_estimator, fit_mixture, fit_sqr, CondEstimator,
    EstimatorKind,
};
use crate::eval::{auroc, fpr_at_tpr, EvalReport, ReportRow};
use crate::nn::train_regressor;
use crate::rng::mix_seed;
use crate::{Affine, Error, Regressor, Result, ScaledRegressor};

const TAG_TOYGEN: u64 = 0x7467_656e;
const TAG_REGRESSOR: u64 = 0x7265_6772;
const TAG_YEST: u64 = 0x7965_7374;
const TAG_DEST: u64 = 0x6465_7374;
const TAG_DV: u64 = 0x6476_7472;
const TAG_CF_SPLIT: u64 = 0x6366_7370;
const TAG_CF_EST: u64 = 0x6366_6573;
const TAG_SCORE: u64 = 0x7363_6f72;

/// Everything a cell fitted, keyed for reuse across methods. Failed fits
/// are kept as error strings so dependent method rows can be annotated
/// while the run continues.
pub struct BenchArtifacts {
    pub standardizer: Option<Standardizer>,
    pub regressor: Arc<dyn Regressor>,
    pub oracle: Option<OracleModel>,
    pub y_estimators: BTreeMap<EstimatorKind, std::result::Result<Arc<CondEstimator>, String>>,
    pub d_estimators:
        BTreeMap<(EstimatorKind, DiscrepancyKind), std::result::Result<Arc<CondEstimator>, String>>,
    pub dv_nets: BTreeMap<DvKey, std::result::Result<Arc<DvFit>, String>>,
    pub conformal:
        BTreeMap<(EstimatorKind, DiscrepancyKind), std::result::Result<Arc<CfFit>, String>>,
    /// Unbiased std of the raw-unit training target (reporting).
    pub target_train_std_raw: f64,
    /// Monte Carlo pairs used when scoring with a diversity net.
    pub dv_n_u: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DvKey {
    pub variant_is_d: bool,
    pub kind: EstimatorKind,
    pub d_kind: DiscrepancyKind,
    pub eps_index: usize,
}

pub struct DvFit {
    pub hnet: HNet,
    pub train_seconds: f64,
}

pub struct CfFit {
    pub estimator: Arc<CondEstimator>,
    pub scorer: ConformalScorer,
    pub calib_seconds: f64,
}

struct Cell<'a> {
    cfg: &'a RunConfig,
    dataset: &'a DatasetConfig,
    dataset_index: usize,
    seed: u64,
    methods: &'a [MethodTag],
}

/// Runs the full benchmark described by the config. Cells run in
/// parallel (bounded by the config and REGDETECT_THREADS); rows come back
/// in config order regardless of scheduling. Any stage failure is
/// recorded on the affected rows and the run continues.
pub fn run_benchmark(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let methods = cfg.parsed_methods()?;

    let mut preloaded: Vec<Option<Arc<Dataset>>> = Vec::new();
    for ds in &cfg.datasets {
        match &ds.csv {
            Some(src) => {
                let data = load_csv(&src.path, src.target.as_deref())?;
                preloaded.push(Some(Arc::new(data)));
            }
            None => preloaded.push(None),
        }
    }

    let mut cells = Vec::new();
    for (di, dataset) in cfg.datasets.iter().enumerate() {
        for &seed in &cfg.seeds {
            cells.push(Cell { cfg, dataset, dataset_index: di, seed, methods: &methods });
        }
    }

    let workers = cfg.resolve_parallelism(cells.len());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let cell_rows: Vec<Vec<ReportRow>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| run_cell(cell, preloaded[cell.dataset_index].clone()))
            .collect()
    });

    Ok(EvalReport { rows: cell_rows.into_iter().flatten().collect() })
}

/// All rows for one (dataset, seed) cell; never fails outright, it
/// annotates instead.
fn run_cell(cell: &Cell<'_>, preloaded: Option<Arc<Dataset>>) -> Vec<ReportRow> {
    match prepare_and_score(cell, preloaded) {
        Ok(rows) => rows,
        Err(e) => {
            // whole-cell failure: one annotated row per would-be cell row
            let mut rows = Vec::new();
            for &d_kind in &cell.cfg.discrepancy.kinds {
                for &epsilon in &cell.cfg.discrepancy.epsilons {
                    for method in cell.methods {
                        rows.push(ReportRow {
                            dataset: cell.dataset.name.clone(),
                            method: method.to_string(),
                            d_kind,
                            epsilon,
                            epsilon_norm: None,
                            seed: cell.seed,
                            auroc: None,
                            fpr_at_tpr90: None,
                            bad_fraction: None,
                            wallclock_s: 0.0,
                            error: Some(e.to_string()),
                        });
                    }
                }
            }
            rows
        }
    }
}

fn prepare_and_score(
    cell: &Cell<'_>,
    preloaded: Option<Arc<Dataset>>,
) -> Result<Vec<ReportRow>> {
    let cfg = cell.cfg;
    let seed = cell.seed;

    // -- materialize and split ------------------------------------------
    let (raw, oracle): (Arc<Dataset>, Option<OracleModel>) = match (&preloaded, &cell.dataset.toy)
    {
        (Some(ds), _) => (ds.clone(), None),
        (None, Some(toy)) => {
            let spec = toy.spec();
            let gen_seed = mix_seed(seed, &[TAG_TOYGEN, cell.dataset_index as u64]);
            let (ds, _) = generate_toy(&spec, toy.n(), gen_seed)?;
            (Arc::new(ds), Some(OracleModel::new(spec)))
        }
        _ => unreachable!("config validation enforces one source"),
    };
    let (train_raw, test_raw) = split_dataset(&raw, cfg.test_fraction, seed)?;

    // -- units -----------------------------------------------------------
    // CSV: standardize features and target on the training split.
    // Toy: keep raw units; the analytic regressor lives there.
    let is_toy = cell.dataset.toy.is_some();
    let (standardizer, train_work, test_work) = if is_toy {
        (None, train_raw.clone(), test_raw.clone())
    } else {
        let s = fit_standardizer(&train_raw)?;
        let tr = apply_standardizer(&s, &train_raw, Direction::Forward);
        let te = apply_standardizer(&s, &test_raw, Direction::Forward);
        (Some(s), tr, te)
    };
    let target_train_std_raw = {
        let t = train_raw.targets();
        let m = t.sum() / t.len() as f64;
        (t.mapv(|v| (v - m).powi(2)).sum() / (t.len() as f64 - 1.0)).sqrt()
    };

    // -- regressor ---------------------------------------------------------
    let regressor: Arc<dyn Regressor> = match (&oracle, cfg.regressor.analytic_toy) {
        (Some(o), true) => Arc::new(o.regressor()),
        _ => {
            let (reg, _) =
                train_regressor(&train_work, &cfg.regressor.options, mix_seed(seed, &[TAG_REGRESSOR]))?;
            Arc::new(reg)
        }
    };

    // -- shared estimator artifacts ---------------------------------------
    let artifacts = fit_artifacts(
        cfg,
        cell.methods,
        &train_work,
        standardizer,
        regressor,
        oracle,
        target_train_std_raw,
        seed,
    );

    // -- score and measure -------------------------------------------------
    let mut rows = Vec::new();
    for &d_kind in &cfg.discrepancy.kinds {
        for (ei, &epsilon) in cfg.discrepancy.epsilons.iter().enumerate() {
            let labels = test_labels(&artifacts, &test_work, d_kind, epsilon);
            for (mi, method) in cell.methods.iter().enumerate() {
                let t0 = Instant::now();
                let scored = score_method(
                    &artifacts,
                    &test_work,
                    *method,
                    d_kind,
                    epsilon,
                    ei,
                    mix_seed(seed, &[TAG_SCORE, mi as u64, ei as u64, d_kind as u64]),
                );
                let row = assemble_row(
                    cell,
                    &artifacts,
                    method,
                    d_kind,
                    epsilon,
                    &labels,
                    scored,
                    t0.elapsed().as_secs_f64(),
                );
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn assemble_row(
    cell: &Cell<'_>,
    artifacts: &BenchArtifacts,
    method: &MethodTag,
    d_kind: DiscrepancyKind,
    epsilon: f64,
    labels: &Result<Vec<bool>>,
    scored: Result<(Vec<f64>, f64)>,
    elapsed: f64,
) -> ReportRow {
    let epsilon_norm = match d_kind {
        DiscrepancyKind::Absolute => Some(epsilon / artifacts.target_train_std_raw),
        DiscrepancyKind::Relative => Some(epsilon),
    };
    let mut row = ReportRow {
        dataset: cell.dataset.name.clone(),
        method: method.to_string(),
        d_kind,
        epsilon,
        epsilon_norm,
        seed: cell.seed,
        auroc: None,
        fpr_at_tpr90: None,
        bad_fraction: None,
        wallclock_s: elapsed,
        error: None,
    };
    let labels = match labels {
        Ok(l) => l,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    let n_bad = labels.iter().filter(|&&b| b).count();
    row.bad_fraction = Some(n_bad as f64 / labels.len() as f64);
    match scored {
        Err(e) => row.error = Some(e.to_string()),
        Ok((scores, extra_seconds)) => {
            row.wallclock_s += extra_seconds;
            match auroc(&scores, labels) {
                Ok(a) => row.auroc = Some(a),
                Err(Error::SingleClassLabels) => {
                    row.error = Some("single-class".into());
                    return row;
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            }
            match fpr_at_tpr(&scores, labels, 0.9) {
                Ok(f) => row.fpr_at_tpr90 = Some(f),
                Err(e) => row.error = Some(e.to_string()),
            }
        }
    }
    row
}

/// Fits every artifact the method list needs, memoizing failures.
#[allow(clippy::too_many_arguments)]
pub fn fit_artifacts(
    cfg: &RunConfig,
    methods: &[MethodTag],
    train_work: &Dataset,
    standardizer: Option<Standardizer>,
    regressor: Arc<dyn Regressor>,
    oracle: Option<OracleModel>,
    target_train_std_raw: f64,
    seed: u64,
) -> BenchArtifacts {
    let mut artifacts = BenchArtifacts {
        standardizer,
        regressor,
        oracle,
        y_estimators: BTreeMap::new(),
        d_estimators: BTreeMap::new(),
        dv_nets: BTreeMap::new(),
        conformal: BTreeMap::new(),
        target_train_std_raw,
        dv_n_u: cfg.dv.n_u,
    };

    let mut y_kinds: Vec<EstimatorKind> = Vec::new();
    let mut d_kinds_needed: Vec<EstimatorKind> = Vec::new();
    let mut cf_kinds: Vec<EstimatorKind> = Vec::new();
    for m in methods {
        match m {
            MethodTag::B1(e) | MethodTag::DvY(e) => push_unique(&mut y_kinds, *e),
            MethodTag::B2(e) | MethodTag::DvD(e) => push_unique(&mut d_kinds_needed, *e),
            MethodTag::Cf(e) => push_unique(&mut cf_kinds, *e),
            MethodTag::Oracle | MethodTag::Hp => {}
        }
    }

    for &e in &y_kinds {
        let fit = fit_y_estimator(cfg, train_work, e, mix_seed(seed, &[TAG_YEST, e as u64]));
        artifacts.y_estimators.insert(e, fit.map(Arc::new).map_err(|err| err.to_string()));
    }

    for &d_kind in &cfg.discrepancy.kinds {
        for &e in &d_kinds_needed {
            let fit = fit_d_estimator(cfg, &artifacts, train_work, e, d_kind, seed);
            artifacts
                .d_estimators
                .insert((e, d_kind), fit.map(Arc::new).map_err(|err| err.to_string()));
        }
        for &e in &cf_kinds {
            let fit = fit_conformal(cfg, &artifacts, train_work, e, d_kind, seed);
            artifacts
                .conformal
                .insert((e, d_kind), fit.map(Arc::new).map_err(|err| err.to_string()));
        }
    }

    // diversity nets depend on (variant, estimator, kind, epsilon)
    for m in methods {
        let (variant, e) = match m {
            MethodTag::DvY(e) => (DvVariant::Y, *e),
            MethodTag::DvD(e) => (DvVariant::D, *e),
            _ => continue,
        };
        for &d_kind in &cfg.discrepancy.kinds {
            for (ei, &epsilon) in cfg.discrepancy.epsilons.iter().enumerate() {
                let key = DvKey {
                    variant_is_d: variant == DvVariant::D,
                    kind: e,
                    d_kind,
                    eps_index: ei,
                };
                if artifacts.dv_nets.contains_key(&key) {
                    continue;
                }
                let fit =
                    fit_dv(cfg, &artifacts, train_work, variant, e, d_kind, epsilon, ei, seed);
                artifacts.dv_nets.insert(key, fit.map(Arc::new).map_err(|err| err.to_string()));
            }
        }
    }
    artifacts
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, item: T) {
    if !v.contains(&item) {
        v.push(item);
    }
}

fn fit_y_estimator(
    cfg: &RunConfig,
    train_work: &Dataset,
    kind: EstimatorKind,
    seed: u64,
) -> Result<CondEstimator> {
    let opts = cfg.estimators.for_kind(kind);
    match kind {
        EstimatorKind::CondGaussian => fit_cond_gaussian(train_work, opts, seed),
        EstimatorKind::Sqr => fit_sqr(train_work, opts, seed),
        EstimatorKind::CondMixture => fit_mixture(train_work, opts, seed),
    }
}

/// The training data and regressor in the units scoring uses for `d_kind`:
/// work units for the absolute kind, raw units for the relative kind.
fn scoring_train_and_regressor(
    artifacts: &BenchArtifacts,
    train_work: &Dataset,
    d_kind: DiscrepancyKind,
) -> Result<(Dataset, Arc<dyn Regressor>)> {
    match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Relative, Some(s)) => {
            let raw_targets: Array1<f64> =
                train_work.targets().mapv(|v| v * s.target_std + s.target_mean);
            let ds = train_work.with_targets(raw_targets)?;
            let reg: Arc<dyn Regressor> = Arc::new(ScaledRegressor {
                inner: artifacts.regressor.clone(),
                output: s.target_affine(),
            });
            Ok((ds, reg))
        }
        _ => Ok((train_work.clone(), artifacts.regressor.clone())),
    }
}

/// An estimator viewed in the units scoring uses for `d_kind`.
fn scoring_estimator_view(
    artifacts: &BenchArtifacts,
    est: &CondEstimator,
    d_kind: DiscrepancyKind,
) -> CondEstimator {
    match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Relative, Some(s)) => est.with_target_affine(s.target_affine()),
        _ => est.with_target_affine(Affine::IDENTITY),
    }
}

/// The tolerance in scoring units.
fn scoring_epsilon(
    artifacts: &BenchArtifacts,
    d_kind: DiscrepancyKind,
    epsilon: f64,
) -> f64 {
    match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Absolute, Some(s)) => epsilon / s.target_std,
        _ => epsilon,
    }
}

fn fit_d_estimator(
    cfg: &RunConfig,
    artifacts: &BenchArtifacts,
    train_work: &Dataset,
    kind: EstimatorKind,
    d_kind: DiscrepancyKind,
    seed: u64,
) -> Result<CondEstimator> {
    let (train, reg) = scoring_train_and_regressor(artifacts, train_work, d_kind)?;
    let opts = cfg.estimators.for_kind(kind);
    fit_discrepancy_estimator(
        &train,
        reg.as_ref(),
        d_kind,
        kind,
        opts,
        mix_seed(seed, &[TAG_DEST, kind as u64, d_kind as u64]),
    )
}

#[allow(clippy::too_many_arguments)]
fn fit_dv(
    cfg: &RunConfig,
    artifacts: &BenchArtifacts,
    train_work: &Dataset,
    variant: DvVariant,
    kind: EstimatorKind,
    d_kind: DiscrepancyKind,
    epsilon: f64,
    eps_index: usize,
    seed: u64,
) -> Result<DvFit> {
    let t0 = Instant::now();
    let (train, reg) = scoring_train_and_regressor(artifacts, train_work, d_kind)?;
    let spec = DiscrepancySpec::new(d_kind, scoring_epsilon(artifacts, d_kind, epsilon))?;
    let est = match variant {
        DvVariant::Y => {
            let base = artifacts
                .y_estimators
                .get(&kind)
                .ok_or_else(|| Error::InvalidConfig("missing Y estimator".into()))?
                .as_ref()
                .map_err(|e| Error::InvalidConfig(e.clone()))?;
            scoring_estimator_view(artifacts, base, d_kind)
        }
        DvVariant::D => {
            let base = artifacts
                .d_estimators
                .get(&(kind, d_kind))
                .ok_or_else(|| Error::InvalidConfig("missing D estimator".into()))?
                .as_ref()
                .map_err(|e| Error::InvalidConfig(e.clone()))?;
            // D estimators are fitted in scoring units already
            base.with_target_affine(Affine::IDENTITY)
        }
    };
    let dv_cfg = DvConfig {
        seed: mix_seed(
            seed,
            &[TAG_DV, variant as u64, kind as u64, d_kind as u64, eps_index as u64],
        ),
        ..cfg.dv.clone()
    };
    let outcome = crate::detectors::train_dv(&est, reg.as_ref(), &train, &spec, variant, &dv_cfg)?;
    Ok(DvFit { hnet: outcome.hnet, train_seconds: t0.elapsed().as_secs_f64() })
}

fn fit_conformal(
    cfg: &RunConfig,
    artifacts: &BenchArtifacts,
    train_work: &Dataset,
    kind: EstimatorKind,
    d_kind: DiscrepancyKind,
    seed: u64,
) -> Result<CfFit> {
    let t0 = Instant::now();
    // the conformity scores need rows the estimator never saw
    let calib_fraction = cfg.conformal.calib_fraction;
    if !(calib_fraction > 0.0 && calib_fraction < 0.5) {
        return Err(Error::InvalidConfig("conformal calib_fraction must lie in (0, 0.5)".into()));
    }
    let (fit_split, calib_split) =
        split_dataset(train_work, calib_fraction, mix_seed(seed, &[TAG_CF_SPLIT]))
            .map_err(|_| Error::CalibrationTooSmall { needed: 20, have: train_work.n_rows() })?;
    let est = fit_y_estimator(cfg, &fit_split, kind, mix_seed(seed, &[TAG_CF_EST, kind as u64]))?;
    let est_view = scoring_estimator_view(artifacts, &est, d_kind);
    let calib = match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Relative, Some(s)) => {
            apply_standardizer(s, &calib_split, Direction::Inverse)
        }
        _ => calib_split,
    };
    let scorer = ConformalScorer::calibrate(&est_view, &calib, cfg.conformal.alpha_grid)?;
    Ok(CfFit {
        estimator: Arc::new(est_view),
        scorer,
        calib_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Ground-truth epsilon-bad labels for the test split.
pub fn test_labels(
    artifacts: &BenchArtifacts,
    test_work: &Dataset,
    d_kind: DiscrepancyKind,
    epsilon: f64,
) -> Result<Vec<bool>> {
    let eps = scoring_epsilon(artifacts, d_kind, epsilon);
    let (targets, preds): (Array1<f64>, Array1<f64>) = match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Relative, Some(s)) => {
            let raw = test_work.targets().mapv(|v| v * s.target_std + s.target_mean);
            let preds = artifacts
                .regressor
                .predict_batch(test_work.features().view())
                .mapv(|v| v * s.target_std + s.target_mean);
            (raw, preds)
        }
        _ => (
            test_work.targets().clone(),
            artifacts.regressor.predict_batch(test_work.features().view()),
        ),
    };
    let mut labels = Vec::with_capacity(targets.len());
    for (y, p) in targets.iter().zip(&preds) {
        labels.push(discrepancy(*y, *p, d_kind)? > eps);
    }
    Ok(labels)
}

/// Scores the whole test split with one method; returns the scores plus
/// seconds of method-specific training to attribute to the row.
pub fn score_method(
    artifacts: &BenchArtifacts,
    test_work: &Dataset,
    method: MethodTag,
    d_kind: DiscrepancyKind,
    epsilon: f64,
    eps_index: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    let eps = scoring_epsilon(artifacts, d_kind, epsilon);
    let spec = DiscrepancySpec::new(d_kind, eps)?;
    let n = test_work.n_rows();

    let unwrap_y = |kind: &EstimatorKind| -> Result<CondEstimator> {
        let base = artifacts
            .y_estimators
            .get(kind)
            .ok_or_else(|| Error::InvalidConfig("missing Y estimator".into()))?
            .as_ref()
            .map_err(|e| Error::InvalidConfig(e.clone()))?;
        Ok(scoring_estimator_view(artifacts, base, d_kind))
    };
    let unwrap_d = |kind: &EstimatorKind| -> Result<Arc<CondEstimator>> {
        artifacts
            .d_estimators
            .get(&(*kind, d_kind))
            .ok_or_else(|| Error::InvalidConfig("missing D estimator".into()))?
            .as_ref()
            .map(Arc::clone)
            .map_err(|e| Error::InvalidConfig(e.clone()))
    };
    let scoring_regressor: Arc<dyn Regressor> = match (d_kind, &artifacts.standardizer) {
        (DiscrepancyKind::Relative, Some(s)) => Arc::new(ScaledRegressor {
            inner: artifacts.regressor.clone(),
            output: s.target_affine(),
        }),
        _ => artifacts.regressor.clone(),
    };

    match method {
        MethodTag::Oracle => {
            let oracle = artifacts.oracle.as_ref().ok_or_else(|| {
                Error::InvalidConfig("the oracle method requires a synthetic dataset".into())
            })?;
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                scores.push(oracle.oracle_pb(test_work.row(i)[0], &spec)?);
            }
            Ok((scores, 0.0))
        }
        MethodTag::Hp => Err(Error::InvalidConfig(
            "HP is a diagnostic dissimilarity, not a benchmark method".into(),
        )),
        MethodTag::B1(e) => {
            let est = unwrap_y(&e)?;
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                scores.push(pb_baseline_y(
                    &est,
                    scoring_regressor.as_ref(),
                    test_work.row(i),
                    &spec,
                )?);
            }
            Ok((scores, 0.0))
        }
        MethodTag::B2(e) => {
            let est = unwrap_d(&e)?;
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                scores.push(pb_baseline_d(&est, test_work.row(i), &spec)?);
            }
            Ok((scores, 0.0))
        }
        MethodTag::DvY(e) | MethodTag::DvD(e) => {
            let variant = match method {
                MethodTag::DvY(_) => DvVariant::Y,
                _ => DvVariant::D,
            };
            let key = DvKey {
                variant_is_d: variant == DvVariant::D,
                kind: e,
                d_kind,
                eps_index,
            };
            let fit = artifacts
                .dv_nets
                .get(&key)
                .ok_or_else(|| Error::InvalidConfig("missing diversity net".into()))?
                .as_ref()
                .map_err(|err| Error::InvalidConfig(err.clone()))?;
            let est = match variant {
                DvVariant::Y => unwrap_y(&e)?,
                DvVariant::D => unwrap_d(&e)?.with_target_affine(Affine::IDENTITY),
            };
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                scores.push(dv_score(
                    &fit.hnet,
                    &est,
                    scoring_regressor.as_ref(),
                    test_work.row(i),
                    &spec,
                    variant,
                    artifacts.dv_n_u,
                    mix_seed(seed, &[i as u64]),
                )?);
            }
            Ok((scores, fit.train_seconds))
        }
        MethodTag::Cf(e) => {
            let fit = artifacts
                .conformal
                .get(&(e, d_kind))
                .ok_or_else(|| Error::InvalidConfig("missing conformal fit".into()))?
                .as_ref()
                .map_err(|err| Error::InvalidConfig(err.clone()))?;
            let mut scores = Vec::with_capacity(n);
            for i in 0..n {
                let x = test_work.row(i);
                let prediction = scoring_regressor.predict_one(x);
                scores.push(fit.scorer.score(&fit.estimator, x, prediction, &spec)?);
            }
            Ok((scores, fit.calib_seconds))
        }
    }
}

