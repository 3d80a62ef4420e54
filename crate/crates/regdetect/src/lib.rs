//! Detection of unreliable regression predictions.
//!
//! Given a trained regressor, a discrepancy function `d` and an error
//! tolerance `epsilon`, this crate scores each input `x` by the estimated
//! probability (or a learned diversity metric) that the prediction error
//! exceeds `epsilon`, and evaluates detectors with ranking metrics.
//!
//! The pieces:
//!
//! * [`data`] — dataset ingestion, splitting, standardization and a
//!   synthetic heteroscedastic generator with known ground truth.
//! * [`nn`] — a small dense-network engine with analytic gradients, Adam
//!   and k-fold cross-validation, shared by every trained component.
//! * [`estimators`] — conditional-distribution estimators for `Y|X=x` and
//!   for the discrepancy `D|X=x`, with a uniform cdf/quantile/sample
//!   contract.
//! * [`detectors`] — the scoring rules: exceedance-probability baselines,
//!   learned diversity discriminators, conformal proxies and the analytic
//!   oracle for synthetic data.
//! * [`eval`] — AUROC / FPR-at-TPR metrics and the benchmark runner.
//! * [`config`] — the run configuration shared by the benchmark runner and
//!   the CLI.

pub mod config;
pub mod data;
pub mod detectors;
pub mod estimators;
pub mod eval;
pub mod nn;
pub mod serialize;

mod error;
pub(crate) mod gauss;
pub(crate) mod rng;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

/// A point predictor `f(x)` in whatever units its consumer established.
///
/// Implemented by trained networks (see [`nn::NetRegressor`]) and by the
/// analytic regressor of the synthetic generator ([`data::ToyRegressor`]).
pub trait Regressor: Send + Sync {
    fn predict_batch(&self, xs: ArrayView2<f64>) -> Array1<f64>;

    fn predict_one(&self, x: ArrayView1<f64>) -> f64 {
        let xs = x.insert_axis(Axis(0));
        self.predict_batch(xs)[0]
    }
}

impl<R: Regressor + ?Sized> Regressor for std::sync::Arc<R> {
    fn predict_batch(&self, xs: ArrayView2<f64>) -> Array1<f64> {
        (**self).predict_batch(xs)
    }

    fn predict_one(&self, x: ArrayView1<f64>) -> f64 {
        (**self).predict_one(x)
    }
}

/// Adapter turning a closure over a feature row into a [`Regressor`].
pub struct FnRegressor<F>(pub F);

impl<F> Regressor for FnRegressor<F>
where
    F: Fn(ArrayView1<f64>) -> f64 + Send + Sync,
{
    fn predict_batch(&self, xs: ArrayView2<f64>) -> Array1<f64> {
        xs.outer_iter().map(|row| (self.0)(row)).collect()
    }
}

/// Affine map `v -> v * scale + shift` between a model's internal target
/// units and the caller's units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine {
    pub scale: f64,
    pub shift: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { scale: 1.0, shift: 0.0 };

    pub fn apply(&self, v: f64) -> f64 {
        v * self.scale + self.shift
    }

    pub fn invert(&self, v: f64) -> f64 {
        (v - self.shift) / self.scale
    }
}

/// A regressor composed with an affine output map (e.g. destandardization).
pub struct ScaledRegressor<R> {
    pub inner: R,
    pub output: Affine,
}

impl<R: Regressor> Regressor for ScaledRegressor<R> {
    fn predict_batch(&self, xs: ArrayView2<f64>) -> Array1<f64> {
        self.inner.predict_batch(xs).mapv(|v| self.output.apply(v))
    }
}
