//! Conformalized quantile correction used as a coverage-inversion proxy.
//!
//! For each miscoverage level `alpha` on a fixed grid, the equal-tailed
//! interval `[q_{a/2}(x), q_{1-a/2}(x)]` is widened by the calibration
//! quantile of the conformity scores
//! `E_i = max(q_{a/2}(x_i) - y_i, y_i - q_{1-a/2}(x_i))`. The proxy score
//! at `x` is one minus the largest grid coverage whose corrected interval
//! still fits inside the epsilon-good band around the prediction.

use ndarray::ArrayView1;

use super::{DiscrepancyKind, DiscrepancySpec};
use crate::data::Dataset;
use crate::estimators::{CondEstimator, PointDistribution};
use crate::{Error, Regressor, Result};

const MIN_CALIBRATION: usize = 20;

/// Per-level conformal corrections fitted on a calibration set that must
/// be disjoint from the estimator's training rows.
#[derive(Debug, Clone)]
pub struct ConformalScorer {
    alphas: Vec<f64>,
    corrections: Vec<f64>,
}

impl ConformalScorer {
    /// Computes the conformity-quantile correction for every level on an
    /// equally spaced alpha grid (`n_alphas` points, e.g. 99 for
    /// 0.01 .. 0.99).
    pub fn calibrate(est: &CondEstimator, calib: &Dataset, n_alphas: usize) -> Result<Self> {
        if calib.n_rows() < MIN_CALIBRATION {
            return Err(Error::CalibrationTooSmall {
                needed: MIN_CALIBRATION,
                have: calib.n_rows(),
            });
        }
        if n_alphas == 0 {
            return Err(Error::InvalidParam("need at least one alpha level".into()));
        }
        let n = calib.n_rows();
        let dists: Vec<PointDistribution> = (0..n)
            .map(|i| est.at(calib.row(i)))
            .collect::<Result<_>>()?;
        let alphas: Vec<f64> =
            (1..=n_alphas).map(|i| i as f64 / (n_alphas + 1) as f64).collect();
        let mut corrections = Vec::with_capacity(n_alphas);
        for &alpha in &alphas {
            let mut scores = Vec::with_capacity(n);
            for (dist, &y) in dists.iter().zip(calib.targets()) {
                let lo = dist.quantile(alpha / 2.0)?;
                let hi = dist.quantile(1.0 - alpha / 2.0)?;
                scores.push((lo - y).max(y - hi));
            }
            scores.sort_by(f64::total_cmp);
            // the ceil((n+1)(1-alpha))-th smallest conformity score
            let k = ((n as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
            let q = if k == 0 {
                f64::NEG_INFINITY
            } else if k > n {
                f64::INFINITY
            } else {
                scores[k - 1]
            };
            corrections.push(q);
        }
        Ok(ConformalScorer { alphas, corrections })
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn corrections(&self) -> &[f64] {
        &self.corrections
    }

    /// Rebuilds a scorer from stored levels and corrections.
    pub fn from_parts(alphas: Vec<f64>, corrections: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() || alphas.len() != corrections.len() {
            return Err(Error::InvalidParam(
                "alphas and corrections must be non-empty and aligned".into(),
            ));
        }
        Ok(ConformalScorer { alphas, corrections })
    }

    /// The corrected equal-tailed interval at coverage `1 - alpha`;
    /// `alpha` must be one of the calibrated grid levels.
    pub fn interval(
        &self,
        est: &CondEstimator,
        x: ArrayView1<f64>,
        alpha: f64,
    ) -> Result<(f64, f64)> {
        let idx = self
            .alphas
            .iter()
            .position(|a| (a - alpha).abs() < 1e-9)
            .ok_or_else(|| {
                Error::InvalidParam(format!("alpha {alpha} is not on the calibrated grid"))
            })?;
        let dist = est.at(x)?;
        self.interval_from(&dist, idx)
    }

    fn interval_from(&self, dist: &PointDistribution, idx: usize) -> Result<(f64, f64)> {
        let alpha = self.alphas[idx];
        let q = self.corrections[idx];
        let lo = dist.quantile(alpha / 2.0)? - q;
        let hi = dist.quantile(1.0 - alpha / 2.0)? + q;
        Ok((lo, hi))
    }

    /// `1 - P_c(x)` where `P_c` is the largest grid coverage whose
    /// corrected interval is contained in the epsilon-good band around the
    /// prediction; 0 when even the widest interval fits, 1 when none does.
    pub fn score(
        &self,
        est: &CondEstimator,
        x: ArrayView1<f64>,
        prediction: f64,
        spec: &DiscrepancySpec,
    ) -> Result<f64> {
        let half_width = match spec.kind {
            DiscrepancyKind::Absolute => spec.epsilon,
            DiscrepancyKind::Relative => {
                if prediction.abs() <= 1e-8 {
                    return Err(Error::RelativeNearZero { rows: vec![] });
                }
                spec.epsilon * prediction.abs()
            }
        };
        let band = (prediction - half_width, prediction + half_width);
        let dist = est.at(x)?;
        let mut best_coverage: Option<f64> = None;
        let mut max_coverage = 0.0f64;
        for idx in 0..self.alphas.len() {
            let coverage = 1.0 - self.alphas[idx];
            max_coverage = max_coverage.max(coverage);
            let (lo, hi) = self.interval_from(&dist, idx)?;
            if lo >= band.0 && hi <= band.1 {
                best_coverage =
                    Some(best_coverage.map_or(coverage, |b: f64| b.max(coverage)));
            }
        }
        Ok(match best_coverage {
            None => 1.0,
            Some(c) if (c - max_coverage).abs() < 1e-12 => 0.0,
            Some(c) => 1.0 - c,
        })
    }
}

/// Convenience wrapper: calibrate and score one input.
pub fn conformal_score(
    est: &CondEstimator,
    calib: &Dataset,
    regressor: &dyn Regressor,
    x: ArrayView1<f64>,
    spec: &DiscrepancySpec,
    n_alphas: usize,
) -> Result<f64> {
    let scorer = ConformalScorer::calibrate(est, calib, n_alphas)?;
    scorer.score(est, x, regressor.predict_one(x), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, stream_rng};
    use ndarray::{array, Array1, Array2};

    fn gaussian_calib(n: usize, seed: u64) -> Dataset {
        let mut rng = stream_rng(seed, &[5]);
        let xs = Array2::from_shape_fn((n, 1), |_| standard_normal(&mut rng));
        let ys = Array1::from_shape_fn(n, |_| standard_normal(&mut rng));
        Dataset::new(xs, ys, None).unwrap()
    }

    #[test]
    fn rejects_small_calibration() {
        let est = crate::estimators::tests::standard_gaussian_estimator();
        let calib = gaussian_calib(10, 0);
        assert!(matches!(
            ConformalScorer::calibrate(&est, &calib, 99),
            Err(Error::CalibrationTooSmall { .. })
        ));
    }

    #[test]
    fn huge_band_scores_zero_and_degenerate_band_scores_one() {
        let est = crate::estimators::tests::standard_gaussian_estimator();
        let calib = gaussian_calib(200, 1);
        let scorer = ConformalScorer::calibrate(&est, &calib, 99).unwrap();
        let x = array![0.0];
        let wide = DiscrepancySpec { kind: DiscrepancyKind::Absolute, epsilon: 1e6 };
        assert_eq!(scorer.score(&est, x.view(), 0.0, &wide).unwrap(), 0.0);
        let tight = DiscrepancySpec { kind: DiscrepancyKind::Absolute, epsilon: 1e-9 };
        assert_eq!(scorer.score(&est, x.view(), 0.0, &tight).unwrap(), 1.0);
    }

    #[test]
    fn score_decreases_with_epsilon() {
        let est = crate::estimators::tests::standard_gaussian_estimator();
        let calib = gaussian_calib(300, 2);
        let scorer = ConformalScorer::calibrate(&est, &calib, 99).unwrap();
        let x = array![0.0];
        let mut last = 1.0;
        for i in 1..=12 {
            let spec = DiscrepancySpec {
                kind: DiscrepancyKind::Absolute,
                epsilon: 0.4 * i as f64,
            };
            let s = scorer.score(&est, x.view(), 0.0, &spec).unwrap();
            assert!(s <= last + 1e-12, "epsilon {} gave {s} after {last}", spec.epsilon);
            last = s;
        }
    }

    #[test]
    fn corrected_interval_covers_exchangeable_draws() {
        // well-specified base estimator: coverage should land near 0.9
        let est = crate::estimators::tests::standard_gaussian_estimator();
        let calib = gaussian_calib(400, 3);
        let scorer = ConformalScorer::calibrate(&est, &calib, 99).unwrap();
        let test = gaussian_calib(2000, 4);
        let alpha = scorer
            .alphas()
            .iter()
            .copied()
            .find(|a| (a - 0.1).abs() < 1e-9)
            .unwrap();
        let mut covered = 0usize;
        for i in 0..test.n_rows() {
            let (lo, hi) = scorer.interval(&est, test.row(i), alpha).unwrap();
            let y = test.targets()[i];
            if y >= lo && y <= hi {
                covered += 1;
            }
        }
        let rate = covered as f64 / test.n_rows() as f64;
        assert!((rate - 0.9).abs() < 0.03, "coverage {rate}");
    }
}
