//! Per-class averaged product distributions of paired discrepancy draws,
//! exported as 2-D histogram grids for plotting.

use ndarray::Array2;

use super::DiscrepancySampler;
use crate::rng::stream_rng;
use crate::{Error, Result};

/// A normalized 2-D histogram over `[lo, hi)^2`.
#[derive(Debug, Clone)]
pub struct HeatmapGrid {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// Row index bins the first draw, column index the second; total mass
    /// is one for a non-empty class, zero otherwise.
    pub mass: Array2<f64>,
}

impl HeatmapGrid {
    fn empty(bins: usize, lo: f64, hi: f64) -> Self {
        HeatmapGrid { bins, lo, hi, mass: Array2::zeros((bins, bins)) }
    }

    fn bin(&self, v: f64) -> usize {
        let frac = (v - self.lo) / (self.hi - self.lo);
        ((frac * self.bins as f64).floor() as isize).clamp(0, self.bins as isize - 1) as usize
    }
}

/// Draws `n_pairs` paired samples per input and accumulates the per-class
/// average product histogram; returns `(good, bad)` grids. The histogram
/// range defaults to the span of the drawn samples.
pub fn paired_sample_heatmap(
    samplers: &[DiscrepancySampler],
    bad: &[bool],
    bins: usize,
    range: Option<(f64, f64)>,
    n_pairs: usize,
    seed: u64,
) -> Result<(HeatmapGrid, HeatmapGrid)> {
    if samplers.len() != bad.len() {
        return Err(Error::ShapeMismatch {
            context: "heatmap labels",
            expected: format!("{}", samplers.len()),
            got: format!("{}", bad.len()),
        });
    }
    if bins == 0 || n_pairs == 0 {
        return Err(Error::InvalidParam("bins and n_pairs must be positive".into()));
    }

    let mut draws: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(samplers.len());
    for (i, sampler) in samplers.iter().enumerate() {
        let mut rng = stream_rng(seed, &[0x686d_6170, i as u64]);
        let mut u = vec![0.0; n_pairs];
        let mut v = vec![0.0; n_pairs];
        sampler.sample_into(&mut rng, &mut u);
        sampler.sample_into(&mut rng, &mut v);
        draws.push((u, v));
    }

    let (lo, hi) = match range {
        Some((lo, hi)) if hi > lo => (lo, hi),
        Some(_) => return Err(Error::InvalidParam("empty heatmap range".into())),
        None => {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (u, v) in &draws {
                for &x in u.iter().chain(v) {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            if hi <= lo || hi.is_nan() {
                hi = lo + 1.0;
            }
            (lo, hi)
        }
    };

    let mut good_grid = HeatmapGrid::empty(bins, lo, hi);
    let mut bad_grid = HeatmapGrid::empty(bins, lo, hi);
    let n_good = bad.iter().filter(|&&b| !b).count();
    let n_bad = bad.len() - n_good;
    for ((u, v), &is_bad) in draws.iter().zip(bad) {
        let (grid, class_n) = if is_bad {
            (&mut bad_grid, n_bad)
        } else {
            (&mut good_grid, n_good)
        };
        let weight = 1.0 / (class_n as f64 * n_pairs as f64);
        for (&a, &b) in u.iter().zip(v) {
            let (i, j) = (grid.bin(a), grid.bin(b));
            grid.mass[[i, j]] += weight;
        }
    }
    Ok((good_grid, bad_grid))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masses_normalize_per_class() {
        let samplers = vec![
            DiscrepancySampler::OracleAbs { bias: 0.0, sigma: 0.2 },
            DiscrepancySampler::OracleAbs { bias: 1.0, sigma: 0.5 },
            DiscrepancySampler::OracleAbs { bias: 0.1, sigma: 0.3 },
        ];
        let bad = vec![false, true, false];
        let (good, badg) = paired_sample_heatmap(&samplers, &bad, 16, None, 500, 0).unwrap();
        assert!((good.mass.sum() - 1.0).abs() < 1e-9);
        assert!((badg.mass.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn classes_concentrate_in_different_regions() {
        // good: tiny discrepancies near zero; bad: shifted mass
        let samplers = vec![
            DiscrepancySampler::OracleAbs { bias: 0.0, sigma: 0.05 },
            DiscrepancySampler::OracleAbs { bias: 2.0, sigma: 0.05 },
        ];
        let bad = vec![false, true];
        let (good, badg) =
            paired_sample_heatmap(&samplers, &bad, 8, Some((0.0, 2.4)), 2000, 1).unwrap();
        // good mass sits in the first bin block, bad far from it
        assert!(good.mass[[0, 0]] > 0.9);
        assert!(badg.mass[[0, 0]] < 0.05);
    }

    #[test]
    fn empty_class_yields_zero_grid() {
        let samplers = vec![DiscrepancySampler::OracleAbs { bias: 0.0, sigma: 0.1 }];
        let bad = vec![false];
        let (_, badg) = paired_sample_heatmap(&samplers, &bad, 4, None, 100, 2).unwrap();
        assert_eq!(badg.mass.sum(), 0.0);
    }
}
