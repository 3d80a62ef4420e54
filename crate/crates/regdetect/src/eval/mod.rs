//! Detection metrics and the benchmark runner.

mod bench;
mod report;

pub use bench::{fit_artifacts, run_benchmark, score_method, test_labels, BenchArtifacts, CfFit, DvFit, DvKey};
pub use report::{emit_report, EvalReport, ReportFormat, ReportRow};

use crate::{Error, Result};

/// Rank-based AUROC (Mann-Whitney): the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "auroc",
            expected: format!("{} labels", scores.len()),
            got: format!("{}", labels.len()),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParam("auroc scores must be finite".into()));
    }

    // midranks over the pooled sample
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block [i, j] shares the average rank
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let u = rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0;
    Ok(u / (n_pos_f * n_neg as f64))
}

/// False-positive rate at the largest score threshold whose true-positive
/// rate reaches `level`, on the empirical step-function ROC with
/// thresholds at observed scores (classification rule: score >= threshold).
pub fn fpr_at_tpr(scores: &[f64], labels: &[bool], level: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "fpr_at_tpr",
            expected: format!("{} labels", scores.len()),
            got: format!("{}", labels.len()),
        });
    }
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "tpr level must lie in (0, 1], got {level}"
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassLabels);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParam("scores must be finite".into()));
    }

    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    // TPR(t) is nonincreasing in t, and TPR at the smallest observed score
    // is 1, so a feasible threshold always exists; take the largest.
    let mut best: Option<f64> = None;
    for &t in thresholds.iter().rev() {
        let tp = scores
            .iter()
            .zip(labels)
            .filter(|(s, &l)| l && **s >= t)
            .count();
        if tp as f64 / n_pos as f64 >= level {
            best = Some(t);
            break;
        }
    }
    let t = best.expect("threshold at min score always reaches tpr 1");
    let fp = scores
        .iter()
        .zip(labels)
        .filter(|(s, &l)| !l && **s >= t)
        .count();
    Ok(fp as f64 / n_neg as f64)
}
