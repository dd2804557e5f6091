//! The four subcommands: check, fit, study, eval.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use slfa::design::{signal_index, IdentifiabilityReport};
use slfa::estimator::{fit as run_fit, FitConfig, FitError};
use slfa::io;
use slfa::metrics::{
    classification_error, normalize_scores, normalized_kendall_error, sign_align,
    wasserstein_empirical, ClassificationSpec,
};
use slfa::model::{FamilyKind, ModelFamily, ResponseData};
use slfa::numeric::child_seed;
use slfa::simulation::{generate_mask, run_study, StudyConfig};

use crate::manifest::RunManifest;
use crate::{Failure, EXIT_DIVERGED, EXIT_NOT_IDENTIFIABLE, EXIT_OK};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FamilyArg {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl From<FamilyArg> for FamilyKind {
    fn from(f: FamilyArg) -> FamilyKind {
        match f {
            FamilyArg::Gaussian => FamilyKind::Gaussian,
            FamilyArg::Bernoulli => FamilyKind::Bernoulli,
            FamilyArg::Poisson => FamilyKind::Poisson,
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

#[derive(Args)]
pub struct CheckArgs {
    /// Design matrix CSV (J rows, K columns of 0/1, optional header).
    q_file: PathBuf,
    /// Treat factor 1 as a pinned intercept column.
    #[arg(long)]
    intercept: bool,
    /// Item types with empirical proportion at or below this threshold are
    /// treated as asymptotically negligible.
    #[arg(long, default_value_t = 0.0)]
    eps_p: f64,
    /// Directory for report.json and manifest.json (report also prints to
    /// stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn check(args: CheckArgs, threads: usize) -> Result<i32, Failure> {
    let start = Instant::now();
    let q = io::read_design_file(&args.q_file)?;
    let report = IdentifiabilityReport::from_design(&q, args.intercept, args.eps_p)?;
    let rendered = serde_json::to_string_pretty(&report)?;
    println!("{rendered}");
    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        let report_path = dir.join("report.json");
        fs::write(&report_path, rendered.as_bytes())
            .map_err(|e| Failure::input(e.to_string()))?;
        let mut manifest = RunManifest::new("check", threads);
        manifest.add_input(&args.q_file)?;
        manifest.add_output(&report_path);
        manifest.config = json!({
            "q_file": args.q_file.display().to_string(),
            "intercept": args.intercept,
            "eps_p": args.eps_p,
        });
        manifest.elapsed_seconds = start.elapsed().as_secs_f64();
        manifest.write(dir)?;
    }
    Ok(if report.all_identifiable {
        EXIT_OK
    } else {
        EXIT_NOT_IDENTIFIABLE
    })
}

#[derive(Args)]
pub struct FitArgs {
    /// Response matrix CSV (N rows, J columns; empty cells are missing).
    y_file: PathBuf,
    /// Design matrix CSV (J rows, K columns of 0/1).
    q_file: PathBuf,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Expected factor count; checked against the design when given.
    #[arg(long)]
    k: Option<usize>,
    /// Constraint ball radius for score and loading rows.
    #[arg(long, default_value_t = 5.0)]
    cprime: f64,
    /// Relative objective-decrease stopping tolerance.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Projected-gradient steps per block update.
    #[arg(long, default_value_t = 5)]
    inner_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pin the first score column to 1 (its loadings become intercepts).
    #[arg(long)]
    intercept: bool,
    /// Map observed values at or above the threshold to 1, below to 0,
    /// before fitting (for dichotomizing rating scales).
    #[arg(long)]
    binarize: Option<f64>,
    /// Subsample observation cells to this expected count with a seeded
    /// Bernoulli mask, on top of any empty-cell missingness.
    #[arg(long)]
    missing_n: Option<f64>,
    /// Output directory for theta_hat.csv, a_hat.csv, trace.csv,
    /// manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

pub fn fit(args: FitArgs, threads: usize) -> Result<i32, Failure> {
    let start = Instant::now();
    let q = io::read_design_file(&args.q_file)?;
    if let Some(k) = args.k {
        if k != q.n_factors() {
            return Err(Failure::input(format!(
                "--k {k} does not match the design's {} factors",
                q.n_factors()
            )));
        }
    }
    let parsed = io::read_matrix_file(&args.y_file)?;
    let mut values = parsed.values;
    let mut mask = parsed.mask;
    if let Some(threshold) = args.binarize {
        for v in values.iter_mut() {
            *v = if *v >= threshold { 1.0 } else { 0.0 };
        }
    }
    if let Some(n_expected) = args.missing_n {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(child_seed(
            args.seed,
            &[0x6d61736b],
        ));
        let extra = generate_mask(n_expected, values.nrows(), values.ncols(), &mut rng)?;
        mask = Some(match mask {
            None => extra,
            Some(existing) => {
                let mut combined = existing;
                combined.zip_mut_with(&extra, |a, &b| *a = *a && b);
                combined
            }
        });
    }
    if values.ncols() != q.n_items() {
        return Err(Failure::input(format!(
            "data has {} columns but the design has {} items",
            values.ncols(),
            q.n_items()
        )));
    }
    let family = ModelFamily::standard(args.family.into());
    let data = ResponseData::new(values, mask, family)?;
    let observed_fraction = data.observed_fraction();

    let mut config = FitConfig::new(q.n_factors(), args.cprime);
    config.max_outer_iters = args.max_iters;
    config.inner_steps = args.inner_steps;
    config.tol_rel_obj = args.tol;
    config.intercept_mode = args.intercept;
    config.seed = args.seed;
    let result = match run_fit(&data, &q, family, &config) {
        Ok(result) => result,
        Err(FitError::Diverged { iter }) => {
            return Err(Failure {
                code: EXIT_DIVERGED,
                message: format!("fit diverged at outer iteration {iter}"),
            })
        }
        Err(e) => return Err(Failure::input(e.to_string())),
    };

    ensure_out_dir(&args.out)?;
    let theta_path = args.out.join("theta_hat.csv");
    let a_path = args.out.join("a_hat.csv");
    let trace_path = args.out.join("trace.csv");
    io::write_matrix_file(&theta_path, &result.scores, None)?;
    io::write_matrix_file(&a_path, &result.loadings, None)?;
    io::write_trace_file(&trace_path, &result.objective_trace)?;

    // Design diagnostics at the estimates.
    let mut report = IdentifiabilityReport::from_design(&q, args.intercept, 0.0)?;
    for k in 0..q.n_factors() {
        report.factors[k].signal_index =
            Some(signal_index(&result.scores, &result.loadings, &q, k)?);
    }

    let mut manifest = RunManifest::new("fit", threads);
    manifest.seed = Some(args.seed);
    manifest.add_input(&args.y_file)?;
    manifest.add_input(&args.q_file)?;
    manifest.add_output(&theta_path);
    manifest.add_output(&a_path);
    manifest.add_output(&trace_path);
    manifest.config = json!({
        "family": family.kind().name(),
        "n_factors": q.n_factors(),
        "cprime": args.cprime,
        "tol": args.tol,
        "max_iters": args.max_iters,
        "inner_steps": args.inner_steps,
        "intercept": args.intercept,
        "binarize": args.binarize,
        "missing_n": args.missing_n,
    });
    manifest.details = json!({
        "observed_fraction": observed_fraction,
        "converged": result.converged,
        "iters_used": result.iters_used,
        "final_objective": result.objective_trace.last(),
        "stalled_updates": result.stalled_updates,
        "identifiability": report,
    });
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    println!(
        "fit: {} outer iterations, converged = {}, outputs in {}",
        result.iters_used,
        result.converged,
        args.out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Args)]
pub struct StudyArgs {
    /// Study configuration JSON.
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's expected observed-cell count.
    #[arg(long)]
    missing_n: Option<f64>,
    /// Output directory for records.csv, aggregate.csv, manifest.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

pub fn study(args: StudyArgs, threads: usize) -> Result<i32, Failure> {
    let start = Instant::now();
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::input(format!("cannot read {}: {e}", args.config.display())))?;
    let mut config = StudyConfig::from_json(&text)
        .map_err(|e| Failure::input(format!("invalid study config: {e}")))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(n) = args.missing_n {
        config.missing_n = Some(n);
    }
    let outcome = run_study(&config)?;

    ensure_out_dir(&args.out)?;
    let records_path = args.out.join("records.csv");
    let aggregate_path = args.out.join("aggregate.csv");
    io::write_records_file(&records_path, &outcome.records)?;
    io::write_aggregate_file(&aggregate_path, &slfa::simulation::aggregate(&outcome.records))?;

    let mut manifest = RunManifest::new("study", threads);
    manifest.seed = Some(config.seed);
    manifest.add_input(&args.config)?;
    manifest.add_output(&records_path);
    manifest.add_output(&aggregate_path);
    manifest.config = serde_json::to_value(&config)?;
    manifest.details = json!({
        "records": outcome.records.len(),
        "failures": outcome.failures,
        "total_wall_time_s": outcome.records.iter().map(|r| r.wall_time_s).sum::<f64>(),
    });
    manifest.elapsed_seconds = start.elapsed().as_secs_f64();
    manifest.write(&args.out)?;
    println!(
        "study: {} records, {} failures, outputs in {}",
        outcome.records.len(),
        outcome.failures.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

#[derive(Args)]
pub struct EvalArgs {
    /// True score matrix CSV.
    theta_true: PathBuf,
    /// Estimated score matrix CSV.
    theta_hat: PathBuf,
    /// One-based factor column to evaluate.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Classification thresholds as quantiles of the true normalized
    /// scores: "lower,upper".
    #[arg(long, value_parser = parse_quantiles, default_value = "0.55,0.65")]
    quantiles: (f64, f64),
    /// Directory for metrics.json and manifest.json (metrics also print to
    /// stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_quantiles(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err("expected two comma-separated quantiles, e.g. 0.55,0.65".into());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| "bad lower quantile")?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| "bad upper quantile")?;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
        return Err("quantiles must satisfy 0 <= lower < upper <= 1".into());
    }
    Ok((lo, hi))
}

#[derive(Serialize)]
struct EvalReport {
    factor: usize,
    sine_error: f64,
    sign: f64,
    wasserstein: f64,
    kendall_normalized: f64,
    classification_error: f64,
    threshold_lower: f64,
    threshold_upper: f64,
    quantiles: (f64, f64),
}

fn read_full_matrix(path: &Path) -> Result<ndarray::Array2<f64>, Failure> {
    let parsed = io::read_matrix_file(path)?;
    if parsed.has_missing() {
        return Err(Failure::input(format!(
            "{} contains empty cells; score files must be complete",
            path.display()
        )));
    }
    Ok(parsed.values)
}

pub fn eval(args: EvalArgs, threads: usize) -> Result<i32, Failure> {
    let start = Instant::now();
    let truth = read_full_matrix(&args.theta_true)?;
    let estimate = read_full_matrix(&args.theta_hat)?;
    if truth.dim() != estimate.dim() {
        return Err(Failure::input(format!(
            "score shapes differ: {:?} vs {:?}",
            truth.dim(),
            estimate.dim()
        )));
    }
    if args.k == 0 || args.k > truth.ncols() {
        return Err(Failure::input(format!(
            "--k {} outside 1..={}",
            args.k,
            truth.ncols()
        )));
    }
    let col = args.k - 1;
    let true_col: Vec<f64> = truth.column(col).to_vec();
    let hat_col: Vec<f64> = estimate.column(col).to_vec();
    let sine = slfa::metrics::factor_sine_error(&truth, &estimate, col)?;
    let c = sign_align(&true_col, &hat_col)?;
    let v = normalize_scores(&true_col, 1.0)?;
    let v_hat = normalize_scores(&hat_col, c)?;
    let (q_lo, q_hi) = args.quantiles;
    let spec = ClassificationSpec::from_quantiles(v.values(), q_lo, q_hi)?;
    let report = EvalReport {
        factor: args.k,
        sine_error: sine,
        sign: c,
        wasserstein: wasserstein_empirical(v.values(), v_hat.values())?,
        kendall_normalized: normalized_kendall_error(v.values(), v_hat.values())?,
        classification_error: classification_error(v.values(), v_hat.values(), spec)?,
        threshold_lower: spec.lower(),
        threshold_upper: spec.upper(),
        quantiles: args.quantiles,
    };
    let rendered = serde_json::to_string_pretty(&report)?;
    println!("{rendered}");
    if let Some(dir) = &args.out {
        ensure_out_dir(dir)?;
        let metrics_path = dir.join("metrics.json");
        fs::write(&metrics_path, rendered.as_bytes())
            .map_err(|e| Failure::input(e.to_string()))?;
        let mut manifest = RunManifest::new("eval", threads);
        manifest.add_input(&args.theta_true)?;
        manifest.add_input(&args.theta_hat)?;
        manifest.add_output(&metrics_path);
        manifest.config = json!({
            "k": args.k,
            "quantiles": args.quantiles,
        });
        manifest.elapsed_seconds = start.elapsed().as_secs_f64();
        manifest.write(dir)?;
    }
    Ok(EXIT_OK)
}
