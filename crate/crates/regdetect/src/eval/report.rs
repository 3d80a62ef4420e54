//! Per-seed result rows, seed aggregation and report emission.
//!
//! The report files are deterministic for a given config: rows follow
//! config order and floats use fixed formatting. Wall-clock timings are
//! kept on the rows for diagnostics but written to a separate timings
//! file so report bytes are reproducible.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detectors::DiscrepancyKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

/// One (dataset, method, kind, epsilon, seed) evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub d_kind: DiscrepancyKind,
    /// Tolerance as configured (raw target units for the absolute kind).
    pub epsilon: f64,
    /// Tolerance normalized by the training target std for the absolute
    /// kind; equal to `epsilon` for the relative kind.
    pub epsilon_norm: Option<f64>,
    pub seed: u64,
    pub auroc: Option<f64>,
    pub fpr_at_tpr90: Option<f64>,
    pub bad_fraction: Option<f64>,
    /// Seconds attributable to this method cell (scoring plus any
    /// method-specific training). Excluded from the report files.
    pub wallclock_s: f64,
    pub error: Option<String>,
}

/// All rows of one benchmark run, in config order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Mean and unbiased std over seeds for one (dataset, method, kind,
/// epsilon) group; metric cells that errored are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dataset: String,
    pub method: String,
    pub d_kind: DiscrepancyKind,
    pub epsilon: f64,
    pub n_seeds: usize,
    pub n_errors: usize,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub fpr_mean: Option<f64>,
    pub fpr_std: Option<f64>,
    pub bad_fraction_mean: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl EvalReport {
    /// Aggregates over seeds, preserving first-appearance group order.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(String, String, DiscrepancyKind, f64)> = Vec::new();
        for row in &self.rows {
            let key = (row.dataset.clone(), row.method.clone(), row.d_kind, row.epsilon);
            if !order.contains(&key) {
                order.push(key);
            }
        }
        order
            .into_iter()
            .map(|(dataset, method, d_kind, epsilon)| {
                let group: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| {
                        r.dataset == dataset
                            && r.method == method
                            && r.d_kind == d_kind
                            && r.epsilon == epsilon
                    })
                    .collect();
                let aurocs: Vec<f64> = group.iter().filter_map(|r| r.auroc).collect();
                let fprs: Vec<f64> = group.iter().filter_map(|r| r.fpr_at_tpr90).collect();
                let bads: Vec<f64> = group.iter().filter_map(|r| r.bad_fraction).collect();
                let n_errors = group.iter().filter(|r| r.error.is_some()).count();
                let (auroc_mean, auroc_std) = if aurocs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&aurocs);
                    (Some(m), Some(s))
                };
                let (fpr_mean, fpr_std) = if fprs.is_empty() {
                    (None, None)
                } else {
                    let (m, s) = mean_std(&fprs);
                    (Some(m), Some(s))
                };
                let bad_fraction_mean = if bads.is_empty() {
                    None
                } else {
                    Some(mean_std(&bads).0)
                };
                AggregateRow {
                    dataset,
                    method,
                    d_kind,
                    epsilon,
                    n_seeds: group.len(),
                    n_errors,
                    auroc_mean,
                    auroc_std,
                    fpr_mean,
                    fpr_std,
                    bad_fraction_mean,
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dataset,method,d_kind,epsilon,epsilon_norm,seed,auroc,fpr_at_tpr90,bad_fraction,error\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.method,
                r.d_kind,
                fmt_f(r.epsilon),
                opt_f(r.epsilon_norm),
                r.seed,
                opt_f(r.auroc),
                opt_f(r.fpr_at_tpr90),
                opt_f(r.bad_fraction),
                r.error.as_deref().map(escape_csv).unwrap_or_default(),
            );
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from(
            "dataset,method,d_kind,epsilon,n_seeds,n_errors,auroc_mean,auroc_std,fpr_mean,fpr_std,bad_fraction_mean\n",
        );
        for a in self.aggregate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                a.dataset,
                a.method,
                a.d_kind,
                fmt_f(a.epsilon),
                a.n_seeds,
                a.n_errors,
                opt_f(a.auroc_mean),
                opt_f(a.auroc_std),
                opt_f(a.fpr_mean),
                opt_f(a.fpr_std),
                opt_f(a.bad_fraction_mean),
            );
        }
        out
    }

    /// Markdown tables in the methods-by-epsilon layout, one table per
    /// (dataset, kind, metric), cells as `mean +- std`.
    pub fn to_markdown(&self) -> String {
        let aggregates = self.aggregate();
        let mut out = String::new();
        let mut sections: Vec<(String, DiscrepancyKind)> = Vec::new();
        for a in &aggregates {
            let key = (a.dataset.clone(), a.d_kind);
            if !sections.contains(&key) {
                sections.push(key);
            }
        }
        for (dataset, d_kind) in sections {
            let section: Vec<&AggregateRow> = aggregates
                .iter()
                .filter(|a| a.dataset == dataset && a.d_kind == d_kind)
                .collect();
            let mut epsilons: Vec<f64> = Vec::new();
            let mut methods: Vec<String> = Vec::new();
            for a in &section {
                if !epsilons.contains(&a.epsilon) {
                    epsilons.push(a.epsilon);
                }
                if !methods.contains(&a.method) {
                    methods.push(a.method.clone());
                }
            }
            for (metric, title) in [(Metric::Auroc, "AUROC"), (Metric::Fpr, "FPR at TPR 90%")] {
                let _ = writeln!(out, "## {dataset} ({d_kind}) — {title}\n");
                let _ = write!(out, "| method |");
                for e in &epsilons {
                    let _ = write!(out, " eps={} |", fmt_f(*e));
                }
                out.push('\n');
                let _ = write!(out, "|---|");
                for _ in &epsilons {
                    let _ = write!(out, "---|");
                }
                out.push('\n');
                if metric == Metric::Auroc {
                    let _ = write!(out, "| (bad fraction) |");
                    for e in &epsilons {
                        let cell = section
                            .iter()
                            .find(|a| a.epsilon == *e && a.bad_fraction_mean.is_some())
                            .and_then(|a| a.bad_fraction_mean)
                            .map(fmt_f)
                            .unwrap_or_else(|| "-".into());
                        let _ = write!(out, " {cell} |");
                    }
                    out.push('\n');
                }
                for m in &methods {
                    let _ = write!(out, "| {m} |");
                    for e in &epsilons {
                        let cell = section
                            .iter()
                            .find(|a| &a.method == m && a.epsilon == *e)
                            .map(|a| match metric {
                                Metric::Auroc => agg_cell(a.auroc_mean, a.auroc_std, a),
                                Metric::Fpr => agg_cell(a.fpr_mean, a.fpr_std, a),
                            })
                            .unwrap_or_else(|| "-".into());
                        let _ = write!(out, " {cell} |");
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        out
    }

    /// Timing lines (non-deterministic; written separately).
    pub fn timings_csv(&self) -> String {
        let mut out = String::from("dataset,method,d_kind,epsilon,seed,wallclock_s\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                r.dataset,
                r.method,
                r.d_kind,
                fmt_f(r.epsilon),
                r.seed,
                r.wallclock_s
            );
        }
        out
    }
}

#[derive(PartialEq, Clone, Copy)]
enum Metric {
    Auroc,
    Fpr,
}

fn agg_cell(mean: Option<f64>, std: Option<f64>, a: &AggregateRow) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{} +- {}", fmt_f(m), fmt_f(s)),
        _ => format!("error x{}", a.n_errors),
    }
}

fn fmt_f(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.into()
    }
}

fn opt_f(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn escape_csv(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes the report in the requested format; returns the file's bytes.
pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<String> {
    let content = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Json => serde_json::to_string_pretty(&serde_json::json!({
            "version": "regdetect-report-v1",
            "rows": report.rows.iter().map(strip_wallclock).collect::<Vec<_>>(),
            "aggregate": report.aggregate(),
        }))
        .map_err(|e| Error::Serialization(e.to_string()))?,
        ReportFormat::Markdown => report.to_markdown(),
    };
    std::fs::write(path, &content).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(content)
}

fn strip_wallclock(row: &ReportRow) -> serde_json::Value {
    let mut v = serde_json::to_value(row).expect("row serializes");
    v.as_object_mut().expect("object").remove("wallclock_s");
    v
}
