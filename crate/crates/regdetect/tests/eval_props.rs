//! Metric properties against brute-force oracles.

mod common;

use proptest::prelude::*;
use regdetect::eval::{auroc, fpr_at_tpr};

/// Random scored instances with both classes present, n <= 30. Scores are
/// drawn from a small integer lattice so ties actually occur.
fn instances() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..=30).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..12).prop_map(|v| v as f64 / 4.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, labels)| {
                labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_equals_brute_force_pairwise((scores, labels) in instances()) {
        let fast = auroc(&scores, &labels).unwrap();
        let brute = common::brute_auroc(&scores, &labels);
        prop_assert!((fast - brute).abs() < 1e-12, "{fast} vs {brute}");
    }

    #[test]
    fn fpr_matches_exhaustive_sweep((scores, labels) in instances()) {
        let fast = fpr_at_tpr(&scores, &labels, 0.9).unwrap();
        let brute = common::brute_fpr_at_tpr(&scores, &labels, 0.9);
        prop_assert_eq!(fast, brute);
    }

    #[test]
    fn auroc_invariant_under_increasing_transform((scores, labels) in instances()) {
        let base = auroc(&scores, &labels).unwrap();
        let exp: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let affine: Vec<f64> = scores.iter().map(|s| 3.5 * s - 11.0).collect();
        prop_assert!((auroc(&exp, &labels).unwrap() - base).abs() < 1e-12);
        prop_assert!((auroc(&affine, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn label_flip_complements_auroc((scores, labels) in instances()) {
        let base = auroc(&scores, &labels).unwrap();
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let inv = auroc(&scores, &flipped).unwrap();
        prop_assert!((base + inv - 1.0).abs() < 1e-12, "{base} + {inv}");
    }

    #[test]
    fn fpr_nonincreasing_as_level_decreases((scores, labels) in instances()) {
        let mut last = f64::INFINITY;
        for level in [1.0, 0.9, 0.7, 0.5, 0.3, 0.1] {
            let f = fpr_at_tpr(&scores, &labels, level).unwrap();
            prop_assert!(f <= last + 1e-12, "level {level}: {f} after {last}");
            last = f;
        }
    }
}
