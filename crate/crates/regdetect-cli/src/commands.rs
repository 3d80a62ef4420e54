//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use regdetect::config::{DatasetConfig, RunConfig};
use regdetect::data::{
    apply_standardizer, fit_standardizer, generate_toy, load_csv, Dataset, Direction,
};
use regdetect::detectors::{decide, DiscrepancyKind, DiscrepancySpec, OracleModel};
use regdetect::estimators::{fit_cond_gaussian, fit_mixture, fit_sqr, EstimatorKind};
use regdetect::eval::{
    emit_report, fit_artifacts, run_benchmark, score_method, test_labels, BenchArtifacts, CfFit,
    DvFit, DvKey, ReportFormat,
};
use regdetect::nn::{train_regressor, NetRegressor};
use regdetect::serialize::{
    estimator_from_doc, estimator_to_doc, net_from_doc, net_to_doc, read_json, write_json,
    BundleDoc, ConformalEntry, DEstimatorEntry, DvNetEntry, YEstimatorEntry, BUNDLE_VERSION,
};

use crate::{BenchArgs, CliError, CliResult, ConfigArg, PlotArgs, ScoreArgs, SynthArgs, TrainArgs};

pub(crate) fn load_config(args: &ConfigArg) -> CliResult<RunConfig> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        CliError::Validation(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods.clone();
    }
    if let Some(eps) = &args.epsilons {
        cfg.discrepancy.epsilons = eps.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Hash of the resolved configuration (after flag overrides), logged and
/// stamped on every output.
pub(crate) fn config_hash(cfg: &RunConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

fn announce(cfg: &RunConfig, hash: &str) {
    eprintln!("regdetect: config sha256={hash} seeds={:?}", cfg.seeds);
}

fn ensure_outdir(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        CliError::Runtime(format!("cannot create {}: {e}", cfg.output_dir.display()))
    })
}

fn write_meta(path: &Path, hash: &str, version: Option<&str>) -> CliResult<()> {
    write_meta_with(path, hash, version, serde_json::Map::new())
}

fn write_meta_with(
    path: &Path,
    hash: &str,
    version: Option<&str>,
    extra: serde_json::Map<String, serde_json::Value>,
) -> CliResult<()> {
    let mut meta = serde_json::json!({
        "artifact": path.file_name().and_then(|s| s.to_str()).unwrap_or_default(),
        "config_hash": hash,
        "format_version": version,
    });
    meta.as_object_mut().expect("object").extend(extra);
    let meta_path = PathBuf::from(format!("{}.meta.json", path.display()));
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes"))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", meta_path.display())))
}

fn select_dataset<'a>(
    cfg: &'a RunConfig,
    name: Option<&str>,
    want_toy: Option<bool>,
) -> CliResult<&'a DatasetConfig> {
    let matches_kind = |d: &DatasetConfig| match want_toy {
        Some(true) => d.toy.is_some(),
        Some(false) => d.csv.is_some(),
        None => true,
    };
    match name {
        Some(n) => cfg
            .datasets
            .iter()
            .find(|d| d.name == n && matches_kind(d))
            .ok_or_else(|| CliError::Validation(format!("no matching dataset named '{n}'"))),
        None => cfg
            .datasets
            .iter()
            .find(|d| matches_kind(d))
            .ok_or_else(|| CliError::Validation("no dataset of the required kind".into())),
    }
}

pub(crate) fn synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let hash = config_hash(&cfg);
    announce(&cfg, &hash);
    ensure_outdir(&cfg)?;

    let entry = select_dataset(&cfg, args.dataset.as_deref(), Some(true))?;
    let toy = entry.toy.as_ref().expect("selected toy dataset");
    let n = args.n.unwrap_or_else(|| toy.n());
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    let (ds, _) = generate_toy(&toy.spec(), n, seed)?;

    let path = cfg.output_dir.join(format!("{}.csv", entry.name));
    let mut out = String::new();
    let names: Vec<String> = ds
        .feature_names()
        .map(|ns| ns.to_vec())
        .unwrap_or_else(|| (0..ds.n_features()).map(|i| format!("x{i}")).collect());
    let _ = writeln!(out, "{},y", names.join(","));
    for i in 0..ds.n_rows() {
        for v in ds.row(i) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", ds.targets()[i]);
    }
    fs::write(&path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    write_meta(&path, &hash, None)?;
    println!("wrote {} ({n} rows, seed {seed})", path.display());
    Ok(())
}

pub(crate) fn train(args: &TrainArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let hash = config_hash(&cfg);
    announce(&cfg, &hash);
    ensure_outdir(&cfg)?;

    let entry = select_dataset(&cfg, args.dataset.as_deref(), Some(false))?;
    let src = entry.csv.as_ref().expect("selected csv dataset");
    let raw = load_csv(&src.path, src.target.as_deref())?;
    let standardizer = fit_standardizer(&raw)?;
    let work = apply_standardizer(&standardizer, &raw, Direction::Forward);
    let seed = cfg.seeds[0];

    let (regressor, best_cfg) = train_regressor(&work, &cfg.regressor.options, seed)?;
    let methods = cfg.parsed_methods()?;
    let artifacts = fit_artifacts(
        &cfg,
        &methods,
        &work,
        Some(standardizer.clone()),
        Arc::new(regressor.clone()),
        None,
        standardizer.target_std,
        seed,
    );

    let mut bundle = BundleDoc {
        version: BUNDLE_VERSION.into(),
        config_hash: hash.clone(),
        standardizer: Some(standardizer),
        regressor: net_to_doc(&regressor.net, Some(best_cfg)),
        y_estimators: Vec::new(),
        d_estimators: Vec::new(),
        dv_nets: Vec::new(),
        conformal: Vec::new(),
    };
    let mut failures = Vec::new();
    for (kind, fit) in &artifacts.y_estimators {
        match fit {
            Ok(est) => bundle
                .y_estimators
                .push(YEstimatorEntry { kind: *kind, estimator: estimator_to_doc(est) }),
            Err(e) => failures.push(format!("Y {kind}: {e}")),
        }
    }
    for ((kind, d_kind), fit) in &artifacts.d_estimators {
        match fit {
            Ok(est) => bundle.d_estimators.push(DEstimatorEntry {
                kind: *kind,
                d_kind: *d_kind,
                estimator: estimator_to_doc(est),
            }),
            Err(e) => failures.push(format!("D {kind}/{d_kind}: {e}")),
        }
    }
    for (key, fit) in &artifacts.dv_nets {
        match fit {
            Ok(dv) => bundle.dv_nets.push(DvNetEntry {
                variant: if key.variant_is_d { "d".into() } else { "y".into() },
                kind: key.kind,
                d_kind: key.d_kind,
                epsilon: cfg.discrepancy.epsilons[key.eps_index],
                net: net_to_doc(&dv.hnet.net, None),
            }),
            Err(e) => failures.push(format!("DV {:?}: {e}", key)),
        }
    }
    for ((kind, d_kind), fit) in &artifacts.conformal {
        match fit {
            Ok(cf) => bundle.conformal.push(ConformalEntry {
                kind: *kind,
                d_kind: *d_kind,
                alphas: cf.scorer.alphas().to_vec(),
                corrections: ConformalEntry::encode_corrections(cf.scorer.corrections()),
                estimator: estimator_to_doc(&cf.estimator),
            }),
            Err(e) => failures.push(format!("CF {kind}/{d_kind}: {e}")),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!(
            "artifact training failed: {}",
            failures.join("; ")
        )));
    }

    let path = cfg.output_dir.join("model.json");
    write_json(&bundle, &path)?;
    write_meta(&path, &hash, Some(BUNDLE_VERSION))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn artifacts_from_bundle(cfg: &RunConfig, bundle: &BundleDoc) -> CliResult<BenchArtifacts> {
    bundle.check_version()?;
    let regressor = NetRegressor { net: net_from_doc(&bundle.regressor)? };
    let mut y_estimators = BTreeMap::new();
    for e in &bundle.y_estimators {
        y_estimators.insert(e.kind, Ok(Arc::new(estimator_from_doc(&e.estimator)?)));
    }
    let mut d_estimators = BTreeMap::new();
    for e in &bundle.d_estimators {
        d_estimators
            .insert((e.kind, e.d_kind), Ok(Arc::new(estimator_from_doc(&e.estimator)?)));
    }
    let mut dv_nets = BTreeMap::new();
    for e in &bundle.dv_nets {
        let eps_index = cfg
            .discrepancy
            .epsilons
            .iter()
            .position(|&eps| (eps - e.epsilon).abs() < 1e-12);
        if let Some(eps_index) = eps_index {
            let key = DvKey {
                variant_is_d: e.variant == "d",
                kind: e.kind,
                d_kind: e.d_kind,
                eps_index,
            };
            let hnet = regdetect::detectors::HNet { net: net_from_doc(&e.net)? };
            dv_nets.insert(key, Ok(Arc::new(DvFit { hnet, train_seconds: 0.0 })));
        }
    }
    let mut conformal = BTreeMap::new();
    for e in &bundle.conformal {
        let est = estimator_from_doc(&e.estimator)?;
        let scorer = regdetect::detectors::ConformalScorer::from_parts(
            e.alphas.clone(),
            e.decode_corrections(),
        )?;
        conformal.insert(
            (e.kind, e.d_kind),
            Ok(Arc::new(CfFit { estimator: Arc::new(est), scorer, calib_seconds: 0.0 })),
        );
    }
    let target_train_std_raw =
        bundle.standardizer.as_ref().map(|s| s.target_std).unwrap_or(1.0);
    Ok(BenchArtifacts {
        standardizer: bundle.standardizer.clone(),
        regressor: Arc::new(regressor),
        oracle: None,
        y_estimators,
        d_estimators,
        dv_nets,
        conformal,
        target_train_std_raw,
        dv_n_u: cfg.dv.n_u,
    })
}

pub(crate) fn score(args: &ScoreArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let hash = config_hash(&cfg);
    announce(&cfg, &hash);
    ensure_outdir(&cfg)?;

    let bundle: BundleDoc = read_json(&args.bundle)?;
    let artifacts = artifacts_from_bundle(&cfg, &bundle)?;
    let target = select_dataset(&cfg, None, Some(false))
        .ok()
        .and_then(|d| d.csv.as_ref())
        .and_then(|c| c.target.clone());
    let raw = load_csv(&args.data, target.as_deref())?;
    let work: Dataset = match &artifacts.standardizer {
        Some(s) => apply_standardizer(s, &raw, Direction::Forward),
        None => raw.clone(),
    };

    let methods = cfg.parsed_methods()?;
    let mut out = String::new();
    let has_gamma = cfg.gamma.is_some();
    if has_gamma {
        let _ = writeln!(out, "row_id,method,d_kind,epsilon,score,label,decision");
    } else {
        let _ = writeln!(out, "row_id,method,d_kind,epsilon,score,label");
    }
    for &d_kind in &cfg.discrepancy.kinds {
        for (ei, &epsilon) in cfg.discrepancy.epsilons.iter().enumerate() {
            let labels = test_labels(&artifacts, &work, d_kind, epsilon)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            for (mi, method) in methods.iter().enumerate() {
                let seed = cfg.seeds[0]
                    .wrapping_mul(0x9e37_79b9)
                    .wrapping_add((mi + 31 * ei) as u64);
                let (scores, _) =
                    score_method(&artifacts, &work, *method, d_kind, epsilon, ei, seed)
                        .map_err(|e| CliError::Runtime(format!("{method}: {e}")))?;
                for (row_id, (score, label)) in scores.iter().zip(&labels).enumerate() {
                    if let Some(g) = cfg.gamma {
                        let _ = writeln!(
                            out,
                            "{row_id},{method},{d_kind},{epsilon},{score},{},{}",
                            *label as u8,
                            decide(*score, g) as u8
                        );
                    } else {
                        let _ = writeln!(
                            out,
                            "{row_id},{method},{d_kind},{epsilon},{score},{}",
                            *label as u8
                        );
                    }
                }
            }
        }
    }
    let path = cfg.output_dir.join("scores.csv");
    fs::write(&path, out)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    write_meta(&path, &hash, None)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub(crate) fn bench(args: &BenchArgs) -> CliResult<()> {
    let cfg = load_config(&args.config)?;
    let hash = config_hash(&cfg);
    announce(&cfg, &hash);
    ensure_outdir(&cfg)?;

    let report = run_benchmark(&cfg)?;
    for format in &cfg.formats {
        let (name, version) = match format {
            ReportFormat::Csv => ("report.csv", "regdetect-report-v1"),
            ReportFormat::Json => ("report.json", "regdetect-report-v1"),
            ReportFormat::Markdown => ("report.md", "regdetect-report-v1"),
        };
        let path = cfg.output_dir.join(name);
        emit_report(&report, &path, *format)?;
        write_meta(&path, &hash, Some(version))?;
        println!("wrote {}", path.display());
        if matches!(format, ReportFormat::Csv) {
            let agg_path = cfg.output_dir.join("report_agg.csv");
            fs::write(&agg_path, report.aggregate_csv()).map_err(|e| {
                CliError::Runtime(format!("cannot write {}: {e}", agg_path.display()))
            })?;
            write_meta(&agg_path, &hash, Some(version))?;
            println!("wrote {}", agg_path.display());
        }
    }
    let timings = cfg.output_dir.join("timings.csv");
    fs::write(&timings, report.timings_csv())
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", timings.display())))?;
    write_meta(&timings, &hash, None)?;
    let errors = report.rows.iter().filter(|r| r.error.is_some()).count();
    println!("{} rows, {} with error annotations", report.rows.len(), errors);
    Ok(())
}

pub(crate) fn plotdata(args: &PlotArgs) -> CliResult<()> {
    use regdetect::detectors::{paired_sample_heatmap, DiscrepancySampler};

    let cfg = load_config(&args.config)?;
    let hash = config_hash(&cfg);
    announce(&cfg, &hash);
    ensure_outdir(&cfg)?;

    let entry = select_dataset(&cfg, args.dataset.as_deref(), None)?;
    let seed = cfg.seeds[0];
    let d_kind = cfg.discrepancy.kinds[0];
    let epsilon = cfg.discrepancy.epsilons[0];
    if d_kind != DiscrepancyKind::Absolute && entry.toy.is_some() {
        return Err(CliError::Validation(
            "toy heatmaps use the absolute discrepancy".into(),
        ));
    }
    let k = cfg.plot.inputs;

    let (samplers, labels): (Vec<DiscrepancySampler>, Vec<bool>) = if let Some(toy) = &entry.toy
    {
        let model = OracleModel::new(toy.spec());
        let gamma = cfg.gamma.unwrap_or(0.4);
        let (ds, _) = generate_toy(&toy.spec(), toy.n(), seed)?;
        let spec = DiscrepancySpec::new(d_kind, epsilon)?;
        let take = k.min(ds.n_rows());
        let xs: Vec<f64> = (0..take).map(|i| ds.row(i)[0]).collect();
        let mask = model.oracle_region(&spec, gamma, &xs)?;
        let samplers = xs.iter().map(|&x| model.sampler(x)).collect();
        (samplers, mask)
    } else {
        let src = entry.csv.as_ref().expect("csv dataset");
        let raw = load_csv(&src.path, src.target.as_deref())?;
        let (train_raw, test_raw) =
            regdetect::data::split_dataset(&raw, cfg.test_fraction, seed)?;
        let standardizer = fit_standardizer(&train_raw)?;
        let train = apply_standardizer(&standardizer, &train_raw, Direction::Forward);
        let test = apply_standardizer(&standardizer, &test_raw, Direction::Forward);
        let (reg, _) = train_regressor(&train, &cfg.regressor.options, seed)?;
        let est_kind = parse_estimator(&args.estimator)?;
        let opts = cfg.estimators.for_kind(est_kind);
        let est = match est_kind {
            EstimatorKind::CondGaussian => fit_cond_gaussian(&train, opts, seed)?,
            EstimatorKind::Sqr => fit_sqr(&train, opts, seed)?,
            EstimatorKind::CondMixture => fit_mixture(&train, opts, seed)?,
        };
        let eps_work = match d_kind {
            DiscrepancyKind::Absolute => epsilon / standardizer.target_std,
            DiscrepancyKind::Relative => epsilon,
        };
        let spec = DiscrepancySpec::new(d_kind, eps_work)?;
        let partition = regdetect::detectors::partition_good_bad(&test, &reg, &spec)?;
        let take = k.min(test.n_rows());
        let mut samplers = Vec::with_capacity(take);
        let mut labels = Vec::with_capacity(take);
        for i in 0..take {
            samplers.push(DiscrepancySampler::from_y_estimator(
                &est,
                &reg,
                test.row(i),
                d_kind,
            )?);
            labels.push(partition.bad.contains(&i));
        }
        (samplers, labels)
    };

    let (good, bad) = paired_sample_heatmap(
        &samplers,
        &labels,
        cfg.plot.bins,
        None,
        cfg.plot.pairs_per_input,
        seed,
    )?;
    for (grid, name) in [(&good, "heatmap_good.csv"), (&bad, "heatmap_bad.csv")] {
        let mut out = String::from("bin_u,bin_v,mass\n");
        for i in 0..grid.bins {
            for j in 0..grid.bins {
                let _ = writeln!(out, "{i},{j},{}", grid.mass[[i, j]]);
            }
        }
        let path = cfg.output_dir.join(name);
        fs::write(&path, out)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        let mut extra = serde_json::Map::new();
        extra.insert("bins".into(), grid.bins.into());
        extra.insert("range_lo".into(), grid.lo.into());
        extra.insert("range_hi".into(), grid.hi.into());
        write_meta_with(&path, &hash, None, extra)?;
        println!("wrote {} (range [{}, {}])", path.display(), grid.lo, grid.hi);
    }
    Ok(())
}

fn parse_estimator(s: &str) -> CliResult<EstimatorKind> {
    match s.to_ascii_uppercase().as_str() {
        "CG" => Ok(EstimatorKind::CondGaussian),
        "SQR" => Ok(EstimatorKind::Sqr),
        "MIX" | "KNIFE" => Ok(EstimatorKind::CondMixture),
        _ => Err(CliError::Validation(format!("unknown estimator '{s}'"))),
    }
}
