//! Training losses with analytic output gradients.
//!
//! Every loss maps `(inputs, outputs, targets)` to a scalar and to
//! `d loss / d outputs`; parameter gradients then come from backprop. The
//! distribution parameterizations (softplus for scales, softmax for mixture
//! weights) live inside the corresponding losses so the networks themselves
//! stay plain identity-output stacks.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{sigmoid, softplus};
use crate::{Error, Result};

/// Where the pinball quantile level comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauSource {
    /// A constant level.
    Fixed(f64),
    /// The last input column carries a per-example level (the simultaneous
    /// quantile regression convention).
    LastInput,
}

/// Loss kinds understood by the trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean squared error on a single output column.
    Mse,
    /// Pinball (quantile) loss `rho_tau(u) = u (tau - 1{u < 0})` with
    /// `u = y - q`; the subgradient at `u = 0` is taken as `tau`.
    Pinball { tau: TauSource },
    /// Gaussian negative log-likelihood; outputs are `(mu, s)` with
    /// `sigma = softplus(s) + sigma_floor`.
    GaussianNll { sigma_floor: f64 },
    /// Gaussian-mixture negative log-likelihood; outputs are `M` logits,
    /// `M` means, `M` raw scales. With `nonneg_means` the means pass
    /// through softplus (used for nonnegative target domains).
    MixtureNll { modes: usize, sigma_floor: f64, nonneg_means: bool },
    /// Weighted sum of outputs: `L = sum_i t_i * o_i`. The diversity
    /// separation objective reduces to this once symmetrized sample pairs
    /// and class weights are assembled into a batch.
    DvSeparation,
}

impl Loss {
    /// Number of output columns the network must produce for this loss.
    pub fn expected_outputs(&self) -> usize {
        match self {
            Loss::Mse | Loss::Pinball { .. } | Loss::DvSeparation => 1,
            Loss::GaussianNll { .. } => 2,
            Loss::MixtureNll { modes, .. } => 3 * modes,
        }
    }

    fn check_shapes(
        &self,
        inputs: ArrayView2<f64>,
        outputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<()> {
        if outputs.ncols() != self.expected_outputs() {
            return Err(Error::ShapeMismatch {
                context: "loss outputs",
                expected: format!("{} columns", self.expected_outputs()),
                got: format!("{}", outputs.ncols()),
            });
        }
        if targets.nrows() != outputs.nrows() || targets.ncols() != 1 {
            return Err(Error::ShapeMismatch {
                context: "loss targets",
                expected: format!("{} x 1", outputs.nrows()),
                got: format!("{} x {}", targets.nrows(), targets.ncols()),
            });
        }
        if matches!(self, Loss::Pinball { tau: TauSource::LastInput }) && inputs.ncols() < 1 {
            return Err(Error::ShapeMismatch {
                context: "pinball tau column",
                expected: "at least one input column".into(),
                got: "0".into(),
            });
        }
        Ok(())
    }

    /// Loss value and gradient with respect to the (post-activation)
    /// network outputs.
    pub fn eval(
        &self,
        inputs: ArrayView2<f64>,
        outputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<(f64, Array2<f64>)> {
        self.check_shapes(inputs, outputs, targets)?;
        let n = outputs.nrows();
        let nf = n as f64;
        let mut grad = Array2::zeros(outputs.raw_dim());
        let mut total = 0.0;

        match *self {
            Loss::Mse => {
                for i in 0..n {
                    let r = outputs[[i, 0]] - targets[[i, 0]];
                    total += r * r;
                    grad[[i, 0]] = 2.0 * r / nf;
                }
                total /= nf;
            }
            Loss::Pinball { tau } => {
                for i in 0..n {
                    let t = match tau {
                        TauSource::Fixed(v) => v,
                        TauSource::LastInput => inputs[[i, inputs.ncols() - 1]],
                    };
                    let u = targets[[i, 0]] - outputs[[i, 0]];
                    let slope = if u < 0.0 { t - 1.0 } else { t };
                    total += u * slope;
                    grad[[i, 0]] = -slope / nf;
                }
                total /= nf;
            }
            Loss::GaussianNll { sigma_floor } => {
                const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
                for i in 0..n {
                    let mu = outputs[[i, 0]];
                    let s_raw = outputs[[i, 1]];
                    let sigma = softplus(s_raw) + sigma_floor;
                    let y = targets[[i, 0]];
                    let z = y - mu;
                    total += HALF_LN_2PI + sigma.ln() + z * z / (2.0 * sigma * sigma);
                    grad[[i, 0]] = -z / (sigma * sigma) / nf;
                    let dl_dsigma = 1.0 / sigma - z * z / (sigma * sigma * sigma);
                    grad[[i, 1]] = dl_dsigma * sigmoid(s_raw) / nf;
                }
                total /= nf;
            }
            Loss::MixtureNll { modes, sigma_floor, nonneg_means } => {
                const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
                let m = modes;
                for i in 0..n {
                    let y = targets[[i, 0]];
                    // softmax over logits, stabilized
                    let max_logit =
                        (0..m).map(|k| outputs[[i, k]]).fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> =
                        (0..m).map(|k| (outputs[[i, k]] - max_logit).exp()).collect();
                    let sum_exp: f64 = exps.iter().sum();
                    let weights: Vec<f64> = exps.iter().map(|e| e / sum_exp).collect();

                    let mut comp_log = Vec::with_capacity(m);
                    let mut means = Vec::with_capacity(m);
                    let mut sigmas = Vec::with_capacity(m);
                    for k in 0..m {
                        let mu_raw = outputs[[i, m + k]];
                        let mu = if nonneg_means { softplus(mu_raw) } else { mu_raw };
                        let s_raw = outputs[[i, 2 * m + k]];
                        let sigma = softplus(s_raw) + sigma_floor;
                        let z = (y - mu) / sigma;
                        comp_log.push(weights[k].ln() - sigma.ln() - HALF_LN_2PI - 0.5 * z * z);
                        means.push(mu);
                        sigmas.push(sigma);
                    }
                    let max_cl = comp_log.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let log_p =
                        max_cl + comp_log.iter().map(|c| (c - max_cl).exp()).sum::<f64>().ln();
                    total -= log_p;

                    for k in 0..m {
                        let resp = (comp_log[k] - log_p).exp();
                        grad[[i, k]] = -(resp - weights[k]) / nf;
                        let z = y - means[k];
                        let mut dmu = -resp * z / (sigmas[k] * sigmas[k]) / nf;
                        if nonneg_means {
                            dmu *= sigmoid(outputs[[i, m + k]]);
                        }
                        grad[[i, m + k]] = dmu;
                        let dl_dsigma =
                            -resp * (z * z / sigmas[k].powi(3) - 1.0 / sigmas[k]) / nf;
                        grad[[i, 2 * m + k]] = dl_dsigma * sigmoid(outputs[[i, 2 * m + k]]);
                    }
                }
                total /= nf;
            }
            Loss::DvSeparation => {
                for i in 0..n {
                    total += targets[[i, 0]] * outputs[[i, 0]];
                    grad[[i, 0]] = targets[[i, 0]];
                }
            }
        }
        Ok((total, grad))
    }

    /// Loss value only.
    pub fn value(
        &self,
        inputs: ArrayView2<f64>,
        outputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
    ) -> Result<f64> {
        self.eval(inputs, outputs, targets).map(|(v, _)| v)
    }
}
