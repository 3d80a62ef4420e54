//! Scoring rules for unreliable-prediction detection.
//!
//! Everything here produces per-input scalar scores oriented the same way:
//! larger means more likely to exceed the error tolerance. The
//! exceedance-probability baselines read the estimated conditional law
//! directly; the diversity discriminators learn a dissimilarity function
//! over paired discrepancy draws; the conformal scorer inverts coverage;
//! and the oracle evaluates the exact exceedance probability available in
//! the synthetic model.

mod conformal;
mod diversity;
mod heatmap;

pub use conformal::{conformal_score, ConformalScorer};
pub use diversity::{
    diversity_of_streams, draw_streams, dv_score, estimate_diversity, symmetrize, train_dv,
    ConstantH, DiscrepancySampler, Dissimilarity, DvConfig, DvOutcome, DvVariant, HNet,
    HpIndicator, ScaledSquaredDiff,
};
pub use heatmap::{paired_sample_heatmap, HeatmapGrid};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ToyRegressor, ToySpec};
use crate::estimators::{normal_cdf, CondEstimator, EstimatorKind};
use crate::{Error, Regressor, Result};

/// Discrepancy flavor: absolute error in target units, or error relative
/// to the prediction amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyKind {
    Absolute,
    Relative,
}

impl std::fmt::Display for DiscrepancyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiscrepancyKind::Absolute => f.write_str("absolute"),
            DiscrepancyKind::Relative => f.write_str("relative"),
        }
    }
}

/// A discrepancy kind together with the error tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancySpec {
    pub kind: DiscrepancyKind,
    pub epsilon: f64,
}

impl DiscrepancySpec {
    pub fn new(kind: DiscrepancyKind, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::InvalidParam(format!("epsilon must be > 0, got {epsilon}")));
        }
        Ok(DiscrepancySpec { kind, epsilon })
    }
}

/// `d(y, yhat)`: absolute `|y - yhat|` or relative `|y - yhat| / |yhat|`.
pub fn discrepancy(y: f64, yhat: f64, kind: DiscrepancyKind) -> Result<f64> {
    match kind {
        DiscrepancyKind::Absolute => Ok((y - yhat).abs()),
        DiscrepancyKind::Relative => {
            if yhat.abs() <= 1e-8 {
                return Err(Error::RelativeNearZero { rows: vec![] });
            }
            Ok((y - yhat).abs() / yhat.abs())
        }
    }
}

/// Disjoint index sets: `d <= epsilon` rows are good, `d > epsilon` rows
/// are bad (strict inequality defines "bad"; ties go to the good side).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoodBadPartition {
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
}

pub fn partition_good_bad(
    ds: &Dataset,
    regressor: &dyn Regressor,
    spec: &DiscrepancySpec,
) -> Result<GoodBadPartition> {
    let preds = regressor.predict_batch(ds.features().view());
    let mut good = Vec::new();
    let mut bad = Vec::new();
    let mut zero_rows = Vec::new();
    for (i, (y, p)) in ds.targets().iter().zip(&preds).enumerate() {
        if spec.kind == DiscrepancyKind::Relative && p.abs() <= 1e-8 {
            zero_rows.push(i);
            continue;
        }
        let d = discrepancy(*y, *p, spec.kind)?;
        if d > spec.epsilon {
            bad.push(i);
        } else {
            good.push(i);
        }
    }
    if !zero_rows.is_empty() {
        return Err(Error::RelativeNearZero { rows: zero_rows });
    }
    Ok(GoodBadPartition { good, bad })
}

/// Method identity carried on every score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    B1(EstimatorKind),
    B2(EstimatorKind),
    DvY(EstimatorKind),
    DvD(EstimatorKind),
    Cf(EstimatorKind),
    Hp,
    Oracle,
}

impl MethodTag {
    /// Whether the score is probability-valued (lies in the unit interval).
    pub fn is_probability(&self) -> bool {
        !matches!(self, MethodTag::DvY(_) | MethodTag::DvD(_))
    }
}

impl std::fmt::Display for MethodTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodTag::B1(e) => write!(f, "B1-{e}"),
            MethodTag::B2(e) => write!(f, "B2-{e}"),
            MethodTag::DvY(e) => write!(f, "DV-Y-{e}"),
            MethodTag::DvD(e) => write!(f, "DV-D-{e}"),
            MethodTag::Cf(e) => write!(f, "CF-{e}"),
            MethodTag::Hp => write!(f, "HP"),
            MethodTag::Oracle => write!(f, "oracle"),
        }
    }
}

/// One scored input. Larger means more likely to be epsilon-bad.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorScore {
    pub method: MethodTag,
    pub value: f64,
}

impl DetectorScore {
    pub fn new(method: MethodTag, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidParam(format!("score for {method} is not finite")));
        }
        if method.is_probability() && !(-1e-9..=1.0 + 1e-9).contains(&value) {
            return Err(Error::InvalidParam(format!(
                "probability-valued score for {method} outside [0, 1]: {value}"
            )));
        }
        let value = if method.is_probability() { value.clamp(0.0, 1.0) } else { value };
        Ok(DetectorScore { method, value })
    }
}

/// Exceedance probability from an estimate of `Y|X=x`:
/// `1 - F(f(x) + e) + F(f(x) - e)` with `e = epsilon` for the absolute
/// kind and `e = epsilon * |f(x)|` for the relative kind.
pub fn pb_baseline_y(
    est: &CondEstimator,
    regressor: &dyn Regressor,
    x: ArrayView1<f64>,
    spec: &DiscrepancySpec,
) -> Result<f64> {
    let prediction = regressor.predict_one(x);
    let half_width = match spec.kind {
        DiscrepancyKind::Absolute => spec.epsilon,
        DiscrepancyKind::Relative => {
            if prediction.abs() <= 1e-8 {
                return Err(Error::RelativeNearZero { rows: vec![] });
            }
            spec.epsilon * prediction.abs()
        }
    };
    let dist = est.at(x)?;
    let p = 1.0 - dist.cdf(prediction + half_width) + dist.cdf(prediction - half_width);
    Ok(p.clamp(0.0, 1.0))
}

/// Exceedance probability from an estimate of the discrepancy law:
/// `1 - F_D(epsilon | x)`.
pub fn pb_baseline_d(
    est: &CondEstimator,
    x: ArrayView1<f64>,
    spec: &DiscrepancySpec,
) -> Result<f64> {
    let p = 1.0 - est.cdf(spec.epsilon, x)?;
    Ok(p.clamp(0.0, 1.0))
}

/// The detector's final call: alarm iff the score strictly exceeds gamma.
pub fn decide(score: f64, gamma: f64) -> bool {
    score > gamma
}

/// The synthetic model with its analytic regressor; exposes the exact
/// bias, noise scale and exceedance probability.
pub struct OracleModel {
    spec: ToySpec,
}

impl OracleModel {
    pub fn new(spec: ToySpec) -> Self {
        OracleModel { spec }
    }

    pub fn bias(&self, x: f64) -> f64 {
        (self.spec.bias)(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        (self.spec.sigma)(x)
    }

    pub fn regressor(&self) -> ToyRegressor {
        self.spec.regressor()
    }

    pub fn toy_spec(&self) -> &ToySpec {
        &self.spec
    }

    /// Exact `P(E > epsilon | X = x)` for the absolute discrepancy:
    /// `1 - [Phi((e - b)/s) - Phi((-e - b)/s)]`.
    pub fn oracle_pb(&self, x: f64, spec: &DiscrepancySpec) -> Result<f64> {
        if spec.kind != DiscrepancyKind::Absolute {
            return Err(Error::InvalidParam(
                "the oracle is defined for the absolute discrepancy".into(),
            ));
        }
        let b = self.bias(x);
        let s = self.sigma(x);
        if s.is_nan() || s <= 0.0 {
            return Err(Error::InvalidParam(format!("sigma(x) must be > 0, got {s}")));
        }
        let p = 1.0 - (normal_cdf((spec.epsilon - b) / s) - normal_cdf((-spec.epsilon - b) / s));
        Ok(p.clamp(0.0, 1.0))
    }

    /// Boolean rejection mask over an input grid: true where the oracle
    /// probability strictly exceeds gamma.
    pub fn oracle_region(
        &self,
        spec: &DiscrepancySpec,
        gamma: f64,
        x_grid: &[f64],
    ) -> Result<Vec<bool>> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParam(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        x_grid
            .iter()
            .map(|&x| Ok(self.oracle_pb(x, spec)? > gamma))
            .collect()
    }

    /// Discrepancy sampler for the exact error law `|b(x) + sigma(x) Z|`.
    pub fn sampler(&self, x: f64) -> DiscrepancySampler {
        DiscrepancySampler::OracleAbs { bias: self.bias(x), sigma: self.sigma(x) }
    }
}
