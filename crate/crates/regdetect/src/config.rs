//! Run configuration shared by the benchmark runner and the CLI.
//!
//! A run is a single JSON document; every knob has a default, so a minimal
//! config only lists datasets, methods, epsilons and seeds.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{ToySpec, XDist};
use crate::detectors::{DiscrepancyKind, DvConfig, MethodTag};
use crate::estimators::{EstimatorKind, EstimatorOptions};
use crate::eval::ReportFormat;
use crate::nn::RegressorOptions;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<DatasetConfig>,
    pub discrepancy: DiscrepancyConfig,
    /// Method names such as "B1-CG", "B2-SQR", "DV-Y-MIX", "CF-SQR",
    /// "oracle".
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    /// Optional reporting threshold for the decision column in score
    /// dumps; ranking metrics never depend on it.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
    /// Worker cap for benchmark cells; the REGDETECT_THREADS environment
    /// variable lowers it further. Default: one worker per cell, capped
    /// by the machine.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub estimators: EstimatorsConfig,
    #[serde(default)]
    pub dv: DvConfig,
    #[serde(default)]
    pub conformal: ConformalConfig,
    #[serde(default)]
    pub plot: PlotConfig,
}

fn default_test_fraction() -> f64 {
    0.1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Markdown]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscrepancyConfig {
    pub kinds: Vec<DiscrepancyKind>,
    /// Tolerances in raw target units for the absolute kind,
    /// dimensionless for the relative kind.
    pub epsilons: Vec<f64>,
}

/// One dataset: named, sourced either from a CSV file or from the
/// synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    #[serde(default)]
    pub csv: Option<CsvSource>,
    #[serde(default)]
    pub toy: Option<ToyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Target column name; the last column when absent.
    #[serde(default)]
    pub target: Option<String>,
}

/// Declarative synthetic-model families (closures cannot live in JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToyConfig {
    /// `f(x) = x`, `phi = f + c (x - a)^3`, `sigma = s (1 + (x + b)^2)`,
    /// standard normal inputs.
    CubicBias {
        n: usize,
        #[serde(default = "default_bias_coeff")]
        bias_coeff: f64,
        #[serde(default = "default_bias_center")]
        bias_center: f64,
        #[serde(default = "default_sigma_base")]
        sigma_base: f64,
        #[serde(default = "default_sigma_center")]
        sigma_center: f64,
    },
    /// `y = slope x + intercept + noise_std z` with an unbiased regressor.
    Linear {
        n: usize,
        #[serde(default = "one")]
        slope: f64,
        #[serde(default)]
        intercept: f64,
        #[serde(default = "one")]
        noise_std: f64,
    },
}

fn default_bias_coeff() -> f64 {
    0.1
}
fn default_bias_center() -> f64 {
    0.2
}
fn default_sigma_base() -> f64 {
    0.05
}
fn default_sigma_center() -> f64 {
    0.2
}
fn one() -> f64 {
    1.0
}

impl ToyConfig {
    pub fn n(&self) -> usize {
        match self {
            ToyConfig::CubicBias { n, .. } | ToyConfig::Linear { n, .. } => *n,
        }
    }

    pub fn spec(&self) -> ToySpec {
        match *self {
            ToyConfig::CubicBias { bias_coeff, bias_center, sigma_base, sigma_center, .. } => {
                ToySpec {
                    phi: Arc::new(move |x| x + bias_coeff * (x - bias_center).powi(3)),
                    bias: Arc::new(move |x| bias_coeff * (x - bias_center).powi(3)),
                    sigma: Arc::new(move |x| sigma_base * (1.0 + (x + sigma_center).powi(2))),
                    x_dist: XDist::StdNormal,
                }
            }
            ToyConfig::Linear { slope, intercept, noise_std, .. } => ToySpec {
                phi: Arc::new(move |x| slope * x + intercept),
                bias: Arc::new(|_| 0.0),
                sigma: Arc::new(move |_| noise_std),
                x_dist: XDist::StdNormal,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressorConfig {
    #[serde(flatten)]
    pub options: RegressorOptions,
    /// Use the synthetic model's analytic regressor instead of training
    /// one on toy datasets.
    pub analytic_toy: bool,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig { options: RegressorOptions::default(), analytic_toy: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorsConfig {
    pub cg: EstimatorOptions,
    pub sqr: EstimatorOptions,
    pub mixture: EstimatorOptions,
}

impl Default for EstimatorsConfig {
    fn default() -> Self {
        EstimatorsConfig {
            cg: EstimatorOptions::cond_gaussian(),
            sqr: EstimatorOptions::sqr(),
            mixture: EstimatorOptions::mixture(),
        }
    }
}

impl EstimatorsConfig {
    pub fn for_kind(&self, kind: EstimatorKind) -> &EstimatorOptions {
        match kind {
            EstimatorKind::CondGaussian => &self.cg,
            EstimatorKind::Sqr => &self.sqr,
            EstimatorKind::CondMixture => &self.mixture,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConformalConfig {
    /// Fraction of the training split held out to calibrate the
    /// conformal correction.
    pub calib_fraction: f64,
    /// Number of equally spaced alpha levels.
    pub alpha_grid: usize,
}

impl Default for ConformalConfig {
    fn default() -> Self {
        ConformalConfig { calib_fraction: 0.2, alpha_grid: 99 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub bins: usize,
    pub pairs_per_input: usize,
    /// Inputs sampled for the heatmap export.
    pub inputs: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { bins: 40, pairs_per_input: 2000, inputs: 50 }
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.to_ascii_uppercase();
        if upper == "ORACLE" {
            return Ok(MethodTag::Oracle);
        }
        if upper == "HP" {
            return Ok(MethodTag::Hp);
        }
        let (family, est) = upper
            .rsplit_once('-')
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))?;
        let kind = match est {
            "CG" => EstimatorKind::CondGaussian,
            "SQR" => EstimatorKind::Sqr,
            "MIX" | "KNIFE" => EstimatorKind::CondMixture,
            _ => return Err(Error::InvalidConfig(format!("unknown estimator in method '{s}'"))),
        };
        match family {
            "B1" => Ok(MethodTag::B1(kind)),
            "B2" => Ok(MethodTag::B2(kind)),
            "DV-Y" => Ok(MethodTag::DvY(kind)),
            "DV-D" => Ok(MethodTag::DvD(kind)),
            "CF" => Ok(MethodTag::Cf(kind)),
            _ => Err(Error::InvalidConfig(format!("unknown method family in '{s}'"))),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
            Error::InvalidConfig(format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parsed_methods(&self) -> Result<Vec<MethodTag>> {
        self.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::InvalidConfig("at least one dataset is required".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.discrepancy.kinds.is_empty() {
            return Err(Error::InvalidConfig("at least one discrepancy kind is required".into()));
        }
        if self.discrepancy.epsilons.is_empty()
            || self.discrepancy.epsilons.iter().any(|&e| e.is_nan() || e <= 0.0)
        {
            return Err(Error::InvalidConfig("every epsilon must be > 0".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig("test_fraction must lie in (0, 1)".into()));
        }
        if let Some(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidConfig("gamma must lie in [0, 1]".into()));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for ds in &self.datasets {
            if ds.name.is_empty() {
                return Err(Error::InvalidConfig("dataset names must be non-empty".into()));
            }
            if !seen.insert(&ds.name) {
                return Err(Error::InvalidConfig(format!("duplicate dataset name '{}'", ds.name)));
            }
            match (&ds.csv, &ds.toy) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "dataset '{}' must set exactly one of csv/toy",
                        ds.name
                    )))
                }
            }
            if let Some(toy) = &ds.toy {
                if toy.n() < 10 {
                    return Err(Error::InvalidConfig(format!(
                        "toy dataset '{}' needs n >= 10",
                        ds.name
                    )));
                }
            }
        }
        self.parsed_methods()?;
        Ok(())
    }

    /// Worker count for benchmark cells: the config cap, then the
    /// REGDETECT_THREADS environment variable, then the cell count.
    pub fn resolve_parallelism(&self, n_cells: usize) -> usize {
        let mut limit = self.parallelism.unwrap_or(n_cells).max(1);
        if let Ok(v) = std::env::var("REGDETECT_THREADS") {
            if let Ok(cap) = v.trim().parse::<usize>() {
                if cap >= 1 {
                    limit = limit.min(cap);
                }
            }
        }
        limit.min(n_cells.max(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "datasets": [{"name": "toy", "toy": {"kind": "cubic_bias", "n": 500}}],
            "discrepancy": {"kinds": ["absolute"], "epsilons": [0.1]},
            "methods": ["oracle", "B1-CG"],
            "seeds": [0]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.test_fraction, 0.1);
        assert_eq!(cfg.estimators.cg.ensemble, 4);
        assert_eq!(cfg.dv.n_u, 2000);
        assert_eq!(cfg.conformal.alpha_grid, 99);
        let methods = cfg.parsed_methods().unwrap();
        assert_eq!(methods[0], MethodTag::Oracle);
        assert_eq!(methods[1], MethodTag::B1(EstimatorKind::CondGaussian));
    }

    #[test]
    fn method_names_parse_all_families() {
        for (s, want) in [
            ("B1-SQR", MethodTag::B1(EstimatorKind::Sqr)),
            ("B2-MIX", MethodTag::B2(EstimatorKind::CondMixture)),
            ("DV-Y-CG", MethodTag::DvY(EstimatorKind::CondGaussian)),
            ("DV-D-SQR", MethodTag::DvD(EstimatorKind::Sqr)),
            ("CF-SQR", MethodTag::Cf(EstimatorKind::Sqr)),
            ("oracle", MethodTag::Oracle),
        ] {
            assert_eq!(s.parse::<MethodTag>().unwrap(), want);
        }
        assert!("B3-CG".parse::<MethodTag>().is_err());
        assert!("DV-CG".parse::<MethodTag>().is_err());
    }

    #[test]
    fn method_display_round_trips() {
        for tag in [
            MethodTag::B1(EstimatorKind::CondGaussian),
            MethodTag::DvD(EstimatorKind::CondMixture),
            MethodTag::Cf(EstimatorKind::Sqr),
            MethodTag::Oracle,
        ] {
            let s = tag.to_string();
            assert_eq!(s.parse::<MethodTag>().unwrap(), tag);
        }
    }

    #[test]
    fn validation_rejects_bad_epsilon_and_sources() {
        let bad = minimal_json().replace("[0.1]", "[0.0]");
        assert!(RunConfig::from_json(&bad).is_err());
        let two_sources = minimal_json().replace(
            r#""toy": {"kind": "cubic_bias", "n": 500}"#,
            r#""toy": {"kind": "cubic_bias", "n": 500}, "csv": {"path": "x.csv"}"#,
        );
        assert!(RunConfig::from_json(&two_sources).is_err());
    }

    #[test]
    fn parse_error_reports_location() {
        let err = RunConfig::from_json("{ not json").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn parallelism_respects_config_and_environment_cap() {
        let mut cfg = RunConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.resolve_parallelism(8), 8);
        cfg.parallelism = Some(3);
        assert_eq!(cfg.resolve_parallelism(8), 3);
        assert_eq!(cfg.resolve_parallelism(2), 2);
        std::env::set_var("REGDETECT_THREADS", "2");
        assert_eq!(cfg.resolve_parallelism(8), 2);
        std::env::set_var("REGDETECT_THREADS", "not-a-number");
        assert_eq!(cfg.resolve_parallelism(8), 3);
        std::env::remove_var("REGDETECT_THREADS");
    }

    #[test]
    fn toy_config_matches_cubic_bias_preset() {
        let toy = ToyConfig::CubicBias {
            n: 100,
            bias_coeff: 0.1,
            bias_center: 0.2,
            sigma_base: 0.05,
            sigma_center: 0.2,
        };
        let spec = toy.spec();
        let reference = ToySpec::cubic_bias();
        for &x in &[-1.0, 0.0, 0.7] {
            assert_eq!((spec.sigma)(x), (reference.sigma)(x));
            assert_eq!((spec.bias)(x), (reference.bias)(x));
        }
    }
}
