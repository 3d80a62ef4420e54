//! Dataset ingestion, train/test splitting, standardization, and synthetic
//! heteroscedastic data generation with known ground truth.

use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{standard_normal, stream_rng};
use crate::{Error, Regressor, Result};

/// An in-memory regression dataset: an `n x k` feature matrix and a scalar
/// target per row. Construction validates shapes and rejects non-finite
/// entries, so downstream code can assume clean numbers.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array1<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Array1<f64>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, k) = features.dim();
        if n == 0 || k == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one row and one feature column, got {n} x {k}"
            )));
        }
        if targets.len() != n {
            return Err(Error::InvalidDataset(format!(
                "target length {} does not match {} feature rows",
                targets.len(),
                n
            )));
        }
        if let Some(names) = &feature_names {
            if names.len() != k {
                return Err(Error::InvalidDataset(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    k
                )));
            }
        }
        if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(
                "non-finite entry in features or targets".into(),
            ));
        }
        Ok(Dataset { features, targets, feature_names })
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Array1<f64> {
        &self.targets
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let features = self.features.select(Axis(0), indices);
        let targets = self.targets.select(Axis(0), indices);
        Dataset {
            features,
            targets,
            feature_names: self.feature_names.clone(),
        }
    }

    /// Same rows with the target vector replaced (used to build the
    /// discrepancy-sample dataset).
    pub fn with_targets(&self, targets: Array1<f64>) -> Result<Dataset> {
        Dataset::new(self.features.clone(), targets, self.feature_names.clone())
    }
}

/// Reads a numeric CSV with a header row. The target is taken from
/// `target_column` when given (by name), otherwise from the last column;
/// all remaining columns become features, row order preserved.
pub fn load_csv(path: impl AsRef<Path>, target_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                display.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            ),
            _ => Error::CsvParse {
                path: display.clone(),
                row: 0,
                column: "<header>".into(),
                message: e.to_string(),
            },
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::CsvParse {
            path: display.clone(),
            row: 0,
            column: "<header>".into(),
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::InvalidDataset("empty header row".into()));
    }

    let target_idx = match target_column {
        Some(name) => headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidDataset(format!("target column '{name}' not found in header"))
        })?,
        None => headers.len() - 1,
    };

    let mut features: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::CsvParse {
            path: display.clone(),
            row: row_idx + 2,
            column: "<record>".into(),
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::CsvParse {
                path: display.clone(),
                row: row_idx + 2,
                column: "<record>".into(),
                message: format!("expected {} cells, got {}", headers.len(), record.len()),
            });
        }
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::CsvParse {
                path: display.clone(),
                row: row_idx + 2,
                column: headers[col_idx].clone(),
                message: format!("cell '{cell}' is not a number"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvParse {
                    path: display.clone(),
                    row: row_idx + 2,
                    column: headers[col_idx].clone(),
                    message: format!("cell '{cell}' is not finite"),
                });
            }
            if col_idx == target_idx {
                targets.push(value);
            } else {
                features.push(value);
            }
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::InvalidDataset(format!("{display}: no data rows")));
    }

    let k = headers.len() - 1;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let features = Array2::from_shape_vec((n_rows, k), features)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Dataset::new(features, Array1::from_vec(targets), Some(feature_names))
}

/// Disjoint row partition by a seeded uniform shuffle. Identical
/// `(dataset, fraction, seed)` triples yield identical splits.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) || test_fraction.is_nan() {
        return Err(Error::InvalidSplit(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = ds.n_rows();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidSplit(format!(
            "split of {n} rows at fraction {test_fraction} leaves an empty side"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, &[0x7370_6c69]);
    indices.shuffle(&mut rng);
    let (test_idx, train_idx) = indices.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.select(&train_idx), ds.select(&test_idx)))
}

/// Per-column affine normalization fitted on a training set (unbiased std,
/// divisor `n - 1`). Forward maps to zero mean / unit std as measured on
/// the fit set; inverse undoes forward.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss = values.map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, (ss / (n - 1) as f64).sqrt())
}

pub fn fit_standardizer(ds: &Dataset) -> Result<Standardizer> {
    let n = ds.n_rows();
    if n < 2 {
        return Err(Error::InvalidDataset(
            "standardizer needs at least 2 rows".into(),
        ));
    }
    let mut feature_mean = Vec::with_capacity(ds.n_features());
    let mut feature_std = Vec::with_capacity(ds.n_features());
    for (j, col) in ds.features().columns().into_iter().enumerate() {
        let (m, s) = mean_std(col.iter().copied(), n);
        if s <= 0.0 {
            let name = ds
                .feature_names()
                .map(|names| names[j].clone())
                .unwrap_or_else(|| format!("column {j}"));
            return Err(Error::ZeroVariance(name));
        }
        feature_mean.push(m);
        feature_std.push(s);
    }
    let (target_mean, target_std) = mean_std(ds.targets().iter().copied(), n);
    if target_std <= 0.0 {
        return Err(Error::ZeroVariance("target".into()));
    }
    Ok(Standardizer { feature_mean, feature_std, target_mean, target_std })
}

pub fn apply_standardizer(s: &Standardizer, ds: &Dataset, direction: Direction) -> Dataset {
    let features = s.transform_features(ds.features(), direction);
    let targets = match direction {
        Direction::Forward => ds.targets().mapv(|v| (v - s.target_mean) / s.target_std),
        Direction::Inverse => ds.targets().mapv(|v| v * s.target_std + s.target_mean),
    };
    Dataset {
        features,
        targets,
        feature_names: ds.feature_names.clone(),
    }
}

impl Standardizer {
    pub fn transform_features(&self, features: &Array2<f64>, direction: Direction) -> Array2<f64> {
        let mut out = features.clone();
        for (mut col, (&m, &s)) in out
            .columns_mut()
            .into_iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
        {
            match direction {
                Direction::Forward => col.mapv_inplace(|v| (v - m) / s),
                Direction::Inverse => col.mapv_inplace(|v| v * s + m),
            }
        }
        out
    }

    /// Affine map from standardized target space back to raw units.
    pub fn target_affine(&self) -> crate::Affine {
        crate::Affine { scale: self.target_std, shift: self.target_mean }
    }
}

/// Scalar function of a scalar input, shared by the toy model pieces.
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Input law for the synthetic generator.
#[derive(Debug, Clone, Copy)]
pub enum XDist {
    StdNormal,
    Uniform { lo: f64, hi: f64 },
}

/// Synthetic additive-noise model `y = phi(x) + sigma(x) * z` with a known
/// deterministic regressor `f(x) = phi(x) - bias(x)`, so the regressor's
/// bias `b(x) = phi(x) - f(x)` and noise scale `sigma(x)` are ground truth.
#[derive(Clone)]
pub struct ToySpec {
    pub phi: ScalarFn,
    pub bias: ScalarFn,
    pub sigma: ScalarFn,
    pub x_dist: XDist,
}

impl ToySpec {
    /// The heteroscedastic cubic-bias example: `f(x) = x`,
    /// `phi(x) = f(x) + 0.1 (x - 0.2)^3`, `sigma(x) = 0.05 (1 + (x + 0.2)^2)`.
    pub fn cubic_bias() -> Self {
        ToySpec {
            phi: Arc::new(|x| x + 0.1 * (x - 0.2).powi(3)),
            bias: Arc::new(|x| 0.1 * (x - 0.2).powi(3)),
            sigma: Arc::new(|x| 0.05 * (1.0 + (x + 0.2).powi(2))),
            x_dist: XDist::StdNormal,
        }
    }

    /// The deterministic regressor `f(x) = phi(x) - bias(x)` implied by
    /// the toy model.
    pub fn regressor(&self) -> ToyRegressor {
        ToyRegressor { phi: self.phi.clone(), bias: self.bias.clone() }
    }
}

impl std::fmt::Debug for ToySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToySpec").field("x_dist", &self.x_dist).finish()
    }
}

/// The analytic regressor implied by a [`ToySpec`].
#[derive(Clone)]
pub struct ToyRegressor {
    phi: ScalarFn,
    bias: ScalarFn,
}

impl ToyRegressor {
    pub fn predict_scalar(&self, x: f64) -> f64 {
        (self.phi)(x) - (self.bias)(x)
    }
}

impl Regressor for ToyRegressor {
    fn predict_batch(&self, xs: ndarray::ArrayView2<f64>) -> Array1<f64> {
        xs.column(0).mapv(|x| self.predict_scalar(x))
    }
}

/// Samples `n` points from the toy model. Seeded and reproducible; errors
/// if `sigma` is not strictly positive at a sampled point.
pub fn generate_toy(spec: &ToySpec, n: usize, seed: u64) -> Result<(Dataset, ToyRegressor)> {
    if n == 0 {
        return Err(Error::InvalidParam("toy sample count must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, &[0x0074_6f79]);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x = match spec.x_dist {
            XDist::StdNormal => standard_normal(&mut rng),
            XDist::Uniform { lo, hi } => rng.gen_range(lo..hi),
        };
        let sigma = (spec.sigma)(x);
        if sigma <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "sigma(x) must be > 0, got {sigma} at x = {x}"
            )));
        }
        let z = standard_normal(&mut rng);
        xs.push(x);
        ys.push((spec.phi)(x) + sigma * z);
    }
    let features = Array2::from_shape_vec((n, 1), xs)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let ds = Dataset::new(features, Array1::from_vec(ys), Some(vec!["x".into()]))?;
    let regressor = ToyRegressor { phi: spec.phi.clone(), bias: spec.bias.clone() };
    Ok((ds, regressor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn load_csv_default_target_is_last_column() {
        let f = write_csv("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), None).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.targets().to_vec(), vec![3.0, 6.0, 9.0]);
        assert_eq!(ds.feature_names().unwrap(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn load_csv_named_target_column() {
        let f = write_csv("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let ds = load_csv(f.path(), Some("a")).unwrap();
        assert_eq!(ds.targets().to_vec(), vec![1.0, 4.0, 7.0]);
        assert_eq!(ds.feature_names().unwrap(), &["b".to_string(), "y".to_string()]);
        assert_eq!(ds.features().row(0).to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn load_csv_rejects_nan_cell_with_location() {
        let f = write_csv("a,b\n1,2\n3,NaN\n");
        let err = load_csv(f.path(), None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3"), "{msg}");
        assert!(msg.contains("column b"), "{msg}");
    }

    #[test]
    fn load_csv_missing_file() {
        let err = load_csv("/nonexistent/file.csv", None).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn load_csv_accepts_constant_target() {
        let f = write_csv("a,y\n1,5\n2,5\n");
        let ds = load_csv(f.path(), None).unwrap();
        assert_eq!(ds.targets().to_vec(), vec![5.0, 5.0]);
    }

    #[test]
    fn split_cardinality_and_union() {
        let ds = Dataset::new(
            Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64),
            Array1::from_iter((0..10).map(|i| i as f64)),
            None,
        )
        .unwrap();
        let (train, test) = split_dataset(&ds, 0.1, 0).unwrap();
        assert_eq!(train.n_rows(), 9);
        assert_eq!(test.n_rows(), 1);
        let mut all: Vec<f64> = train.targets().iter().chain(test.targets()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..10).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let ds = Dataset::new(
            Array2::from_shape_fn((20, 1), |(i, _)| i as f64),
            Array1::from_iter((0..20).map(|i| i as f64)),
            None,
        )
        .unwrap();
        let (tr1, te1) = split_dataset(&ds, 0.25, 42).unwrap();
        let (tr2, te2) = split_dataset(&ds, 0.25, 42).unwrap();
        assert_eq!(tr1.targets().to_vec(), tr2.targets().to_vec());
        assert_eq!(te1.targets().to_vec(), te2.targets().to_vec());
        let (tr3, _) = split_dataset(&ds, 0.25, 43).unwrap();
        assert_ne!(tr1.targets().to_vec(), tr3.targets().to_vec());
    }

    #[test]
    fn split_rejects_empty_side() {
        let ds = Dataset::new(
            Array2::from_shape_fn((10, 1), |(i, _)| i as f64),
            Array1::from_iter((0..10).map(|i| i as f64)),
            None,
        )
        .unwrap();
        assert!(split_dataset(&ds, 0.95, 0).is_err());
        assert!(split_dataset(&ds, 0.0, 0).is_err());
        assert!(split_dataset(&ds, 1.0, 0).is_err());
    }

    #[test]
    fn standardizer_two_point_statistics() {
        let ds = Dataset::new(
            Array2::from_shape_vec((2, 1), vec![1.0, 3.0]).unwrap(),
            Array1::from_vec(vec![0.0, 2.0]),
            None,
        )
        .unwrap();
        let s = fit_standardizer(&ds).unwrap();
        assert!((s.target_mean - 1.0).abs() < 1e-12);
        assert!((s.target_std - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn standardizer_rejects_constant_column() {
        let ds = Dataset::new(
            Array2::from_shape_vec((3, 1), vec![5.0, 5.0, 5.0]).unwrap(),
            Array1::from_vec(vec![1.0, 2.0, 3.0]),
            None,
        )
        .unwrap();
        assert!(matches!(fit_standardizer(&ds), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn standardizer_round_trip() {
        let ds = Dataset::new(
            Array2::from_shape_fn((7, 3), |(i, j)| (i as f64 + 1.3) * (j as f64 - 0.7)),
            Array1::from_iter((0..7).map(|i| 100.0 + i as f64 * 3.5)),
            None,
        )
        .unwrap();
        let s = fit_standardizer(&ds).unwrap();
        let fwd = apply_standardizer(&s, &ds, Direction::Forward);
        let back = apply_standardizer(&s, &fwd, Direction::Inverse);
        for (a, b) in ds.targets().iter().zip(back.targets()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
        for (a, b) in ds.features().iter().zip(back.features()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn toy_moments_match_spec() {
        let spec = ToySpec {
            phi: Arc::new(|_| 0.0),
            bias: Arc::new(|_| 0.0),
            sigma: Arc::new(|_| 1.0),
            x_dist: XDist::StdNormal,
        };
        let (ds, reg) = generate_toy(&spec, 100_000, 1).unwrap();
        let n = ds.n_rows() as f64;
        let mean = ds.targets().sum() / n;
        let std = (ds.targets().mapv(|y| (y - mean).powi(2)).sum() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
        assert_eq!(reg.predict_scalar(1.7), 0.0);
    }

    #[test]
    fn toy_rejects_nonpositive_sigma() {
        let spec = ToySpec {
            phi: Arc::new(|_| 0.0),
            bias: Arc::new(|_| 0.0),
            sigma: Arc::new(|x| x),
            x_dist: XDist::StdNormal,
        };
        assert!(generate_toy(&spec, 100, 0).is_err());
    }

    #[test]
    fn toy_regressor_matches_bias_definition() {
        let spec = ToySpec::cubic_bias();
        let (_, reg) = generate_toy(&spec, 10, 3).unwrap();
        // b(x) = phi(x) - f(x) must equal 0.1 (x - 0.2)^3
        for &x in &[-1.5, 0.0, 0.2, 2.0] {
            let b = (spec.phi)(x) - reg.predict_scalar(x);
            assert!((b - 0.1 * (x - 0.2f64).powi(3)).abs() < 1e-12);
        }
    }

    #[test]
    fn toy_conditional_variance_in_bin() {
        // constant sigma: empirical variance in a narrow x-bin approaches
        // sigma^2 within 3 standard errors
        let spec = ToySpec {
            phi: Arc::new(|x| 2.0 * x),
            bias: Arc::new(|_| 0.0),
            sigma: Arc::new(|_| 0.5),
            x_dist: XDist::Uniform { lo: -1.0, hi: 1.0 },
        };
        let (ds, _) = generate_toy(&spec, 200_000, 7).unwrap();
        let mut residuals = Vec::new();
        for (x, y) in ds.features().column(0).iter().zip(ds.targets()) {
            if (*x - 0.3).abs() < 0.01 {
                residuals.push(y - 2.0 * x);
            }
        }
        let m = residuals.len() as f64;
        assert!(m > 100.0);
        let mean = residuals.iter().sum::<f64>() / m;
        let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0);
        // variance of the sample variance for normal data: 2 sigma^4 / (m-1)
        let se = (2.0 * 0.25f64.powi(2) / (m - 1.0)).sqrt();
        assert!((var - 0.25).abs() < 3.0 * se, "var {var}, se {se}");
    }
}
