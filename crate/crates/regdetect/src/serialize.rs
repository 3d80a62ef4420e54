//! Versioned JSON documents for trained artifacts.
//!
//! Formats: `regdetect-net-v1` for one network (layer dims, activation
//! tags, row-major weights, producing config), `regdetect-est-v1` for a
//! conditional estimator (its networks plus kind and domain metadata), and
//! `regdetect-bundle-v1` for a whole trained model directory entry.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::detectors::{ConformalScorer, DiscrepancyKind, HNet};
use crate::estimators::{CondEstimator, EstimatorKind, EstimatorModel, TargetDomain};
use crate::nn::{Activation, DenseNet, Layer, TrainConfig};
use crate::{Affine, Error, Result};

pub const NET_VERSION: &str = "regdetect-net-v1";
pub const EST_VERSION: &str = "regdetect-est-v1";
pub const BUNDLE_VERSION: &str = "regdetect-bundle-v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDoc {
    /// Row-major `(out, in)` weight matrix.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetDoc {
    pub version: String,
    pub layer_dims: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub layers: Vec<LayerDoc>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

pub fn net_to_doc(net: &DenseNet, train_config: Option<TrainConfig>) -> NetDoc {
    NetDoc {
        version: NET_VERSION.into(),
        layer_dims: net.layer_dims(),
        hidden_activation: Activation::Relu,
        output_activation: net.output_activation,
        layers: net
            .layers
            .iter()
            .map(|l| LayerDoc {
                weights: l.w.iter().copied().collect(),
                bias: l.b.to_vec(),
            })
            .collect(),
        train_config,
    }
}

pub fn net_from_doc(doc: &NetDoc) -> Result<DenseNet> {
    if doc.version != NET_VERSION {
        return Err(Error::VersionMismatch {
            expected: NET_VERSION.into(),
            got: doc.version.clone(),
        });
    }
    if doc.layers.len() + 1 != doc.layer_dims.len() {
        return Err(Error::Serialization(format!(
            "{} layers do not match {} dims",
            doc.layers.len(),
            doc.layer_dims.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, layer) in doc.layers.iter().enumerate() {
        let (fan_in, fan_out) = (doc.layer_dims[i], doc.layer_dims[i + 1]);
        if layer.weights.len() != fan_in * fan_out || layer.bias.len() != fan_out {
            return Err(Error::Serialization(format!("layer {i} has inconsistent shapes")));
        }
        let w = Array2::from_shape_vec((fan_out, fan_in), layer.weights.clone())
            .map_err(|e| Error::Serialization(e.to_string()))?;
        layers.push(Layer { w, b: Array1::from_vec(layer.bias.clone()) });
    }
    let net = DenseNet { layers, output_activation: doc.output_activation };
    if !net.all_finite() {
        return Err(Error::Serialization("non-finite parameter in stored network".into()));
    }
    Ok(net)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorDoc {
    pub version: String,
    pub kind: EstimatorKind,
    pub target_domain: TargetDomain,
    pub target_affine: Affine,
    #[serde(default)]
    pub sigma_floor: Option<f64>,
    #[serde(default)]
    pub modes: Option<usize>,
    #[serde(default)]
    pub tau_grid: Option<usize>,
    pub ensemble: Vec<NetDoc>,
}

pub fn estimator_to_doc(est: &CondEstimator) -> EstimatorDoc {
    let (sigma_floor, modes, tau_grid, ensemble) = match &est.model {
        EstimatorModel::Gaussian { members, sigma_floor } => (
            Some(*sigma_floor),
            None,
            None,
            members.iter().map(|n| net_to_doc(n, None)).collect(),
        ),
        EstimatorModel::Sqr { net, tau_grid } => {
            (None, None, Some(*tau_grid), vec![net_to_doc(net, None)])
        }
        EstimatorModel::Mixture { net, modes, sigma_floor, .. } => {
            (Some(*sigma_floor), Some(*modes), None, vec![net_to_doc(net, None)])
        }
    };
    EstimatorDoc {
        version: EST_VERSION.into(),
        kind: est.kind(),
        target_domain: est.domain,
        target_affine: est.target_affine,
        sigma_floor,
        modes,
        tau_grid,
        ensemble,
    }
}

pub fn estimator_from_doc(doc: &EstimatorDoc) -> Result<CondEstimator> {
    if doc.version != EST_VERSION {
        return Err(Error::VersionMismatch {
            expected: EST_VERSION.into(),
            got: doc.version.clone(),
        });
    }
    let nets: Vec<DenseNet> = doc.ensemble.iter().map(net_from_doc).collect::<Result<_>>()?;
    let est = match doc.kind {
        EstimatorKind::CondGaussian => CondEstimator::from_gaussian_members(
            nets,
            doc.sigma_floor.unwrap_or(1e-4),
            doc.target_domain,
        )?,
        EstimatorKind::Sqr => {
            let net = nets.into_iter().next().ok_or_else(|| {
                Error::Serialization("sqr estimator document has no network".into())
            })?;
            CondEstimator::from_sqr_net(net, doc.tau_grid.unwrap_or(513), doc.target_domain)?
        }
        EstimatorKind::CondMixture => {
            let net = nets.into_iter().next().ok_or_else(|| {
                Error::Serialization("mixture estimator document has no network".into())
            })?;
            CondEstimator::from_mixture_net(
                net,
                doc.modes.unwrap_or(1),
                doc.sigma_floor.unwrap_or(1e-4),
                doc.target_domain,
            )?
        }
    };
    Ok(est.with_target_affine(doc.target_affine))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DvNetEntry {
    pub variant: String,
    pub kind: EstimatorKind,
    pub d_kind: DiscrepancyKind,
    pub epsilon: f64,
    pub net: NetDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConformalEntry {
    pub kind: EstimatorKind,
    pub d_kind: DiscrepancyKind,
    pub alphas: Vec<f64>,
    /// `None` marks an unbounded correction (the conformity quantile fell
    /// beyond the calibration sample); JSON has no infinity literal.
    pub corrections: Vec<Option<f64>>,
    pub estimator: EstimatorDoc,
}

impl ConformalEntry {
    pub fn encode_corrections(raw: &[f64]) -> Vec<Option<f64>> {
        raw.iter().map(|&c| if c.is_finite() { Some(c) } else { None }).collect()
    }

    pub fn decode_corrections(&self) -> Vec<f64> {
        self.corrections.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct YEstimatorEntry {
    pub kind: EstimatorKind,
    pub estimator: EstimatorDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DEstimatorEntry {
    pub kind: EstimatorKind,
    pub d_kind: DiscrepancyKind,
    pub estimator: EstimatorDoc,
}

/// A complete trained model as written by the `train` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleDoc {
    pub version: String,
    pub config_hash: String,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    pub regressor: NetDoc,
    #[serde(default)]
    pub y_estimators: Vec<YEstimatorEntry>,
    #[serde(default)]
    pub d_estimators: Vec<DEstimatorEntry>,
    #[serde(default)]
    pub dv_nets: Vec<DvNetEntry>,
    #[serde(default)]
    pub conformal: Vec<ConformalEntry>,
}

impl BundleDoc {
    pub fn check_version(&self) -> Result<()> {
        if self.version != BUNDLE_VERSION {
            return Err(Error::VersionMismatch {
                expected: BUNDLE_VERSION.into(),
                got: self.version.clone(),
            });
        }
        Ok(())
    }

    pub fn dv_net(
        &self,
        variant: &str,
        kind: EstimatorKind,
        d_kind: DiscrepancyKind,
        epsilon: f64,
    ) -> Option<Result<HNet>> {
        self.dv_nets
            .iter()
            .find(|e| {
                e.variant == variant
                    && e.kind == kind
                    && e.d_kind == d_kind
                    && (e.epsilon - epsilon).abs() < 1e-12
            })
            .map(|e| net_from_doc(&e.net).map(|net| HNet { net }))
    }

    pub fn conformal_scorer(
        &self,
        kind: EstimatorKind,
        d_kind: DiscrepancyKind,
    ) -> Option<Result<(CondEstimator, ConformalScorer)>> {
        self.conformal.iter().find(|e| e.kind == kind && e.d_kind == d_kind).map(|e| {
            let est = estimator_from_doc(&e.estimator)?;
            let scorer = ConformalScorer::from_parts(e.alphas.clone(), e.decode_corrections())?;
            Ok((est, scorer))
        })
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &std::path::Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
}
