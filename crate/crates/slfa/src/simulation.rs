//! Ground-truth generators and the replication-study harness: cyclic design
//! patterns, parameter sampling on balls, response sampling, missingness
//! masks, replication loops with per-replication child seeds, and metric
//! aggregation into figure-ready summaries.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignMatrix};
use crate::estimator::{fit, max_trace_increase, FitConfig, FitError};
use crate::metrics::{
    classification_error, factor_sine_error, normalize_scores, normalized_kendall_error,
    scaled_frobenius_distance, sign_align, wasserstein_empirical, ClassificationSpec,
    MetricsError,
};
use crate::model::{natural_parameters, FamilyKind, ModelError, ModelFamily, ResponseData};
use crate::numeric::{child_seed, quantile_sorted};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("design kind needs {expected} factors, got {got}")]
    KindFactorMismatch { expected: String, got: usize },
    #[error("invalid study configuration: {0}")]
    BadConfig(String),
    #[error("expected observation count {n} outside (0, {max}]")]
    MaskBound { n: f64, max: f64 },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Built-in design patterns plus arbitrary cyclic custom patterns
/// (factor labels one-based in configs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignKind {
    /// Item j loads on factor (j mod K) + 1 only.
    Simple,
    /// Items cycle through the K consecutive factor triples
    /// {1,2,3}, {2,3,4}, ..., wrapping around. Needs K >= 3.
    Mixed,
    /// Items alternate between {1} and {1,2}: the second factor only ever
    /// appears together with the first. Needs K = 2.
    Nested,
    /// Items cycle through the three pairs {1,2}, {1,3}, {2,3}. Needs K = 3.
    PairCycle,
    Custom { patterns: Vec<Vec<usize>> },
}

impl DesignKind {
    /// Length of the repeating pattern cycle.
    pub fn cycle_length(&self, n_factors: usize) -> usize {
        match self {
            DesignKind::Simple | DesignKind::Mixed => n_factors,
            DesignKind::Nested => 2,
            DesignKind::PairCycle => 3,
            DesignKind::Custom { patterns } => patterns.len(),
        }
    }

    fn patterns(&self, n_factors: usize) -> Result<Vec<Vec<usize>>, SimulationError> {
        match self {
            DesignKind::Simple => Ok((0..n_factors).map(|k| vec![k]).collect()),
            DesignKind::Mixed => {
                if n_factors < 3 {
                    return Err(SimulationError::KindFactorMismatch {
                        expected: "at least 3".into(),
                        got: n_factors,
                    });
                }
                Ok((0..n_factors)
                    .map(|start| (0..3).map(|o| (start + o) % n_factors).collect())
                    .collect())
            }
            DesignKind::Nested => {
                if n_factors != 2 {
                    return Err(SimulationError::KindFactorMismatch {
                        expected: "exactly 2".into(),
                        got: n_factors,
                    });
                }
                Ok(vec![vec![0], vec![0, 1]])
            }
            DesignKind::PairCycle => {
                if n_factors != 3 {
                    return Err(SimulationError::KindFactorMismatch {
                        expected: "exactly 3".into(),
                        got: n_factors,
                    });
                }
                Ok(vec![vec![0, 1], vec![0, 2], vec![1, 2]])
            }
            DesignKind::Custom { patterns } => {
                if patterns.is_empty() {
                    return Err(SimulationError::BadConfig(
                        "custom design needs at least one pattern".into(),
                    ));
                }
                let mut zero_based = Vec::with_capacity(patterns.len());
                for p in patterns {
                    let mut row = Vec::with_capacity(p.len());
                    for &label in p {
                        if label == 0 || label > n_factors {
                            return Err(SimulationError::BadConfig(format!(
                                "custom pattern factor label {label} outside 1..={n_factors}"
                            )));
                        }
                        row.push(label - 1);
                    }
                    zero_based.push(row);
                }
                Ok(zero_based)
            }
        }
    }
}

/// Generates a J×K design by repeating the kind's pattern cycle. When J is
/// not a multiple of the cycle length the last cycle is truncated (and the
/// truncation logged), which perturbs the empirical proportions by at most
/// `cycle_length / J`.
pub fn generate_design(
    kind: &DesignKind,
    n_items: usize,
    n_factors: usize,
) -> Result<DesignMatrix, SimulationError> {
    let patterns = kind.patterns(n_factors)?;
    if !n_items.is_multiple_of(patterns.len()) {
        log::warn!(
            "item count {n_items} is not a multiple of the {}-pattern cycle; last cycle truncated",
            patterns.len()
        );
    }
    let mut entries = Array2::<u8>::zeros((n_items, n_factors));
    for j in 0..n_items {
        for &k in &patterns[j % patterns.len()] {
            entries[[j, k]] = 1;
        }
    }
    Ok(DesignMatrix::new(entries)?)
}

/// Distribution used for ground-truth parameter rows on the radius-C ball.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallDistribution {
    /// Uniform on the solid ball (direction uniform, norm = C * U^(1/K)).
    #[default]
    UniformBall,
    /// Uniform on the sphere of radius C.
    UniformSphere,
    /// Standard normal conditioned on the ball, by rejection.
    TruncatedNormal,
}

/// Samples `count` i.i.d. rows from the chosen distribution over the ball of
/// the given radius in R^k.
pub fn sample_ball<R: Rng + ?Sized>(
    count: usize,
    k: usize,
    radius: f64,
    distribution: BallDistribution,
    rng: &mut R,
) -> Array2<f64> {
    assert!(radius > 0.0, "ball radius must be positive");
    let mut out = Array2::zeros((count, k));
    let mut direction = vec![0.0; k];
    for i in 0..count {
        match distribution {
            BallDistribution::UniformBall | BallDistribution::UniformSphere => {
                loop {
                    let mut norm_sq = 0.0f64;
                    for d in direction.iter_mut() {
                        *d = StandardNormal.sample(rng);
                        norm_sq += *d * *d;
                    }
                    if norm_sq > 0.0 {
                        let norm = norm_sq.sqrt();
                        for d in direction.iter_mut() {
                            *d /= norm;
                        }
                        break;
                    }
                }
                let r = if distribution == BallDistribution::UniformSphere {
                    radius
                } else {
                    radius * rng.random_range(0.0..1.0f64).powf(1.0 / k as f64)
                };
                for (kk, &d) in direction.iter().enumerate() {
                    out[[i, kk]] = r * d;
                }
            }
            BallDistribution::TruncatedNormal => {
                // Rejection; falls back to sphere scaling only if acceptance
                // is pathologically rare for the requested radius.
                let mut accepted = false;
                for _ in 0..100_000 {
                    let mut norm_sq = 0.0;
                    for d in direction.iter_mut() {
                        *d = StandardNormal.sample(rng);
                        norm_sq += *d * *d;
                    }
                    if norm_sq <= radius * radius {
                        accepted = true;
                        break;
                    }
                }
                if !accepted {
                    log::warn!("truncated-normal rejection failed; scaling onto the sphere");
                    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
                    for d in direction.iter_mut() {
                        *d *= radius / norm;
                    }
                }
                for (kk, &d) in direction.iter().enumerate() {
                    out[[i, kk]] = d;
                }
            }
        }
    }
    out
}

/// Zeroes loading entries wherever the design does: the constrained truth.
pub fn apply_design(
    raw: &Array2<f64>,
    q: &DesignMatrix,
) -> Result<Array2<f64>, SimulationError> {
    if raw.nrows() != q.n_items() || raw.ncols() != q.n_factors() {
        return Err(SimulationError::BadConfig(format!(
            "loadings are {}x{} but design is {}x{}",
            raw.nrows(),
            raw.ncols(),
            q.n_items(),
            q.n_factors()
        )));
    }
    let mut out = raw.clone();
    for ((j, k), v) in out.indexed_iter_mut() {
        if !q.loads(j, k) {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Independent Bernoulli observation mask with inclusion probability
/// `n_expected / (rows * cols)`.
pub fn generate_mask<R: Rng + ?Sized>(
    n_expected: f64,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Array2<bool>, SimulationError> {
    let total = (rows * cols) as f64;
    if !(n_expected > 0.0 && n_expected <= total) {
        return Err(SimulationError::MaskBound {
            n: n_expected,
            max: total,
        });
    }
    let p = n_expected / total;
    let mut mask = Array2::from_elem((rows, cols), true);
    if p < 1.0 {
        for v in mask.iter_mut() {
            *v = rng.random_range(0.0..1.0) < p;
        }
    }
    Ok(mask)
}

/// How the sample size N is derived from each J in the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSizeRule {
    /// N = ceil(multiplier * J).
    Multiplier(f64),
    /// Explicit N per grid entry (must match the grid length).
    Explicit(Vec<usize>),
}

impl Default for SampleSizeRule {
    fn default() -> Self {
        SampleSizeRule::Multiplier(25.0)
    }
}

/// Fit-loop overrides used by study runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyFitOptions {
    pub max_outer_iters: usize,
    pub inner_steps: usize,
    pub tol_rel_obj: f64,
}

impl Default for StudyFitOptions {
    fn default() -> Self {
        StudyFitOptions {
            max_outer_iters: 500,
            inner_steps: 5,
            // Desk-scale studies target trends; the statistical spread across
            // replications dwarfs optimization slack at this tolerance.
            tol_rel_obj: 1e-6,
        }
    }
}

fn default_fit_radius_factor() -> f64 {
    1.2
}

fn default_quantiles() -> (f64, f64) {
    (0.55, 0.65)
}

fn default_gaussian_variance() -> f64 {
    1.0
}

/// Full description of a replication study, deserializable from JSON.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyConfig {
    pub family: FamilyKind,
    #[serde(default = "default_gaussian_variance")]
    pub gaussian_variance: f64,
    pub n_factors: usize,
    pub design: DesignKind,
    pub j_grid: Vec<usize>,
    #[serde(default)]
    pub n_rule: SampleSizeRule,
    /// Ball radius C for the ground-truth draws.
    pub radius: f64,
    /// The fit uses radius `fit_radius_factor * radius`.
    #[serde(default = "default_fit_radius_factor")]
    pub fit_radius_factor: f64,
    pub replications: usize,
    pub seed: u64,
    /// Expected number of observed cells; omitted means fully observed.
    #[serde(default)]
    pub missing_n: Option<f64>,
    /// Quantiles of the true normalized scores used as classification
    /// thresholds.
    #[serde(default = "default_quantiles")]
    pub classification_quantiles: (f64, f64),
    #[serde(default)]
    pub ball: BallDistribution,
    #[serde(default)]
    pub fit: StudyFitOptions,
}

impl StudyConfig {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn family(&self) -> Result<ModelFamily, ModelError> {
        match self.family {
            FamilyKind::Gaussian => ModelFamily::gaussian(self.gaussian_variance),
            FamilyKind::Bernoulli => Ok(ModelFamily::bernoulli()),
            FamilyKind::Poisson => Ok(ModelFamily::poisson()),
        }
    }

    fn validate(&self) -> Result<(), SimulationError> {
        if self.j_grid.is_empty() {
            return Err(SimulationError::BadConfig("empty J grid".into()));
        }
        if self.replications == 0 {
            return Err(SimulationError::BadConfig(
                "need at least one replication".into(),
            ));
        }
        if self.radius.is_nan() || self.radius <= 0.0 {
            return Err(SimulationError::BadConfig("radius must be positive".into()));
        }
        if self.fit_radius_factor.is_nan() || self.fit_radius_factor <= 0.0 {
            return Err(SimulationError::BadConfig(
                "fit radius factor must be positive".into(),
            ));
        }
        let (lo, hi) = self.classification_quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi || lo.is_nan() {
            return Err(SimulationError::BadConfig(format!(
                "classification quantiles must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})"
            )));
        }
        if let SampleSizeRule::Explicit(ns) = &self.n_rule {
            if ns.len() != self.j_grid.len() {
                return Err(SimulationError::BadConfig(
                    "explicit N list must match the J grid length".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn sample_size(&self, grid_index: usize) -> usize {
        match &self.n_rule {
            SampleSizeRule::Multiplier(m) => {
                (m * self.j_grid[grid_index] as f64).ceil() as usize
            }
            SampleSizeRule::Explicit(ns) => ns[grid_index],
        }
    }
}

/// Per-replication record of all recovery metrics. Ranking, distribution,
/// and classification metrics refer to the first factor, matching how the
/// summaries are reported.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicationRecord {
    pub j: usize,
    pub n: usize,
    pub replication: usize,
    pub sine_errors: Vec<f64>,
    pub frobenius_scaled: f64,
    pub wasserstein: f64,
    pub kendall_normalized: f64,
    pub classification_error: f64,
    pub fit_iters: usize,
    pub converged: bool,
    /// Wall-clock seconds; excluded from record CSVs to keep them
    /// byte-identical across reruns.
    pub wall_time_s: f64,
}

/// A replication that could not produce a record, with the reason.
#[derive(Clone, Debug, Serialize)]
pub struct StudyFailure {
    pub j: usize,
    pub n: usize,
    pub replication: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct StudyOutcome {
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<StudyFailure>,
}

fn run_replication(
    config: &StudyConfig,
    grid_index: usize,
    replication: usize,
) -> Result<ReplicationRecord, String> {
    let start = std::time::Instant::now();
    let j = config.j_grid[grid_index];
    let n = config.sample_size(grid_index);
    let k = config.n_factors;
    let family = config.family().map_err(|e| e.to_string())?;
    let q = generate_design(&config.design, j, k).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(
        config.seed,
        &[j as u64, replication as u64, 0],
    ));
    let theta_star = sample_ball(n, k, config.radius, config.ball, &mut rng);
    let raw = sample_ball(j, k, config.radius, config.ball, &mut rng);
    let a_star = apply_design(&raw, &q).map_err(|e| e.to_string())?;
    let m_star = natural_parameters(&theta_star, &a_star);
    let mut values = Array2::zeros((n, j));
    for i in 0..n {
        for jj in 0..j {
            values[[i, jj]] = family
                .sample(m_star[[i, jj]], &mut rng)
                .map_err(|e| e.to_string())?;
        }
    }
    let mask = match config.missing_n {
        Some(n_expected) => {
            Some(generate_mask(n_expected, n, j, &mut rng).map_err(|e| e.to_string())?)
        }
        None => None,
    };
    let data = ResponseData::new(values, mask, family).map_err(|e| e.to_string())?;

    if log::log_enabled!(log::Level::Debug) {
        log::debug!(
            "J={j} rep={replication}: score non-degeneracy {:.4}",
            crate::design::scaled_min_singular(&theta_star)
        );
    }

    let mut fit_config = FitConfig::new(k, config.fit_radius_factor * config.radius);
    fit_config.max_outer_iters = config.fit.max_outer_iters;
    fit_config.inner_steps = config.fit.inner_steps;
    fit_config.tol_rel_obj = config.fit.tol_rel_obj;
    fit_config.seed = child_seed(config.seed, &[j as u64, replication as u64, 1]);
    let result = fit(&data, &q, family, &fit_config).map_err(|e: FitError| e.to_string())?;
    let increase = max_trace_increase(&result.objective_trace);
    if increase > 1e-10 {
        return Err(format!("objective trace increased by {increase:.3e}"));
    }

    let frob = scaled_frobenius_distance(&result.natural_parameters(), &m_star)
        .map_err(|e: MetricsError| e.to_string())?;
    let mut sine_errors = Vec::with_capacity(k);
    for kk in 0..k {
        sine_errors
            .push(factor_sine_error(&theta_star, &result.scores, kk).map_err(|e| e.to_string())?);
    }
    let true_col: Vec<f64> = theta_star.column(0).to_vec();
    let hat_col: Vec<f64> = result.scores.column(0).to_vec();
    let c = sign_align(&true_col, &hat_col).map_err(|e| e.to_string())?;
    let v = normalize_scores(&true_col, 1.0).map_err(|e| e.to_string())?;
    let v_hat = normalize_scores(&hat_col, c).map_err(|e| e.to_string())?;
    let (q_lo, q_hi) = config.classification_quantiles;
    let spec = ClassificationSpec::from_quantiles(v.values(), q_lo, q_hi)
        .map_err(|e| e.to_string())?;
    Ok(ReplicationRecord {
        j,
        n,
        replication,
        sine_errors,
        frobenius_scaled: frob,
        wasserstein: wasserstein_empirical(v.values(), v_hat.values())
            .map_err(|e| e.to_string())?,
        kendall_normalized: normalized_kendall_error(v.values(), v_hat.values())
            .map_err(|e| e.to_string())?,
        classification_error: classification_error(v.values(), v_hat.values(), spec)
            .map_err(|e| e.to_string())?,
        fit_iters: result.iters_used,
        converged: result.converged,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs the whole study: every (J, replication) pair draws its own ground
/// truth and data from a child seed, fits, and reports metrics against the
/// truth. Replications run in parallel; failures are recorded, not fatal.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome, SimulationError> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.j_grid.len())
        .flat_map(|g| (0..config.replications).map(move |r| (g, r)))
        .collect();
    let results: Vec<Result<ReplicationRecord, StudyFailure>> = tasks
        .par_iter()
        .map(|&(g, r)| {
            run_replication(config, g, r).map_err(|message| StudyFailure {
                j: config.j_grid[g],
                n: config.sample_size(g),
                replication: r,
                message,
            })
        })
        .collect();
    let mut outcome = StudyOutcome::default();
    for res in results {
        match res {
            Ok(rec) => outcome.records.push(rec),
            Err(failure) => {
                log::warn!(
                    "replication {} at J={} failed: {}",
                    failure.replication,
                    failure.j,
                    failure.message
                );
                outcome.failures.push(failure);
            }
        }
    }
    Ok(outcome)
}

/// One metric value of one replication, in long ("tidy") format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TidyRow {
    pub j: usize,
    pub n: usize,
    pub replication: usize,
    pub metric: String,
    pub value: f64,
}

/// Flattens records into tidy rows: one row per (replication, metric).
/// Wall time is deliberately excluded so record files are reproducible.
pub fn tidy_rows(records: &[ReplicationRecord]) -> Vec<TidyRow> {
    let mut rows = Vec::new();
    for r in records {
        let mut push = |metric: &str, value: f64| {
            rows.push(TidyRow {
                j: r.j,
                n: r.n,
                replication: r.replication,
                metric: metric.to_string(),
                value,
            });
        };
        for (k, s) in r.sine_errors.iter().enumerate() {
            push(&format!("sine_factor_{}", k + 1), *s);
        }
        push("frobenius_scaled", r.frobenius_scaled);
        push("wasserstein", r.wasserstein);
        push("kendall_normalized", r.kendall_normalized);
        push("classification_error", r.classification_error);
        push("fit_iters", r.fit_iters as f64);
    }
    rows
}

/// Median and quartiles of one metric at one grid point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateRow {
    pub j: usize,
    pub metric: String,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Aggregates tidy metrics across replications: median and quartiles per
/// (J, metric), in deterministic order.
pub fn aggregate(records: &[ReplicationRecord]) -> Vec<AggregateRow> {
    let rows = tidy_rows(records);
    let mut j_values: Vec<usize> = records.iter().map(|r| r.j).collect();
    j_values.sort_unstable();
    j_values.dedup();
    let mut metrics: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
    metrics.sort();
    metrics.dedup();
    let mut out = Vec::new();
    for j in j_values {
        for metric in &metrics {
            let mut values: Vec<f64> = rows
                .iter()
                .filter(|r| r.j == j && &r.metric == metric)
                .map(|r| r.value)
                .collect();
            if values.is_empty() {
                continue;
            }
            values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
            out.push(AggregateRow {
                j,
                metric: metric.clone(),
                median: quantile_sorted(&values, 0.5),
                q25: quantile_sorted(&values, 0.25),
                q75: quantile_sorted(&values, 0.75),
            });
        }
    }
    out
}

/// Median of one metric from aggregate rows, if present.
pub fn aggregate_median(rows: &[AggregateRow], j: usize, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.j == j && r.metric == metric)
        .map(|r| r.median)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{type_partition, FactorSet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn simple_design_proportions() {
        let q = generate_design(&DesignKind::Simple, 5, 5).unwrap();
        let p = type_partition(&q);
        for k in 0..5 {
            assert_abs_diff_eq!(p.proportion(FactorSet::singleton(k)), 0.2);
        }
    }

    #[test]
    fn nested_design_alternates() {
        let q = generate_design(&DesignKind::Nested, 4, 2).unwrap();
        let p = type_partition(&q);
        assert_abs_diff_eq!(p.proportion(FactorSet::singleton(0)), 0.5);
        assert_abs_diff_eq!(p.proportion(FactorSet::from_factors([0, 1])), 0.5);
        assert_eq!(p.items_of(FactorSet::singleton(0)), &[0, 2]);
    }

    #[test]
    fn pair_cycle_design_matches_pattern() {
        let q = generate_design(&DesignKind::PairCycle, 6, 3).unwrap();
        assert_eq!(q.row_set(0), FactorSet::from_factors([0, 1]));
        assert_eq!(q.row_set(1), FactorSet::from_factors([0, 2]));
        assert_eq!(q.row_set(2), FactorSet::from_factors([1, 2]));
        assert_eq!(q.row_set(3), FactorSet::from_factors([0, 1]));
    }

    #[test]
    fn mixed_design_cycles_triples() {
        let q = generate_design(&DesignKind::Mixed, 5, 5).unwrap();
        assert_eq!(q.row_set(0), FactorSet::from_factors([0, 1, 2]));
        assert_eq!(q.row_set(3), FactorSet::from_factors([3, 4, 0]));
        assert_eq!(q.row_set(4), FactorSet::from_factors([4, 0, 1]));
    }

    #[test]
    fn design_kind_factor_mismatch() {
        assert!(generate_design(&DesignKind::Nested, 4, 3).is_err());
        assert!(generate_design(&DesignKind::PairCycle, 6, 4).is_err());
        assert!(generate_design(&DesignKind::Mixed, 6, 2).is_err());
    }

    #[test]
    fn design_proportions_converge_to_nominal() {
        for (kind, k) in [
            (DesignKind::Simple, 5usize),
            (DesignKind::Mixed, 5),
            (DesignKind::Nested, 2),
            (DesignKind::PairCycle, 3),
        ] {
            let cycle = kind.cycle_length(k);
            for j in [17usize, 50, 101] {
                let q = generate_design(&kind, j, k).unwrap();
                let p = type_partition(&q);
                // Nominal proportion of each distinct pattern in one cycle.
                let nominal = 1.0 / cycle as f64;
                for (_, items) in p.types() {
                    let observed = items.len() as f64 / j as f64;
                    assert!(
                        (observed - nominal).abs() <= cycle as f64 / j as f64 + 1e-12,
                        "{kind:?} J={j}: {observed} vs {nominal}"
                    );
                }
            }
        }
    }

    #[test]
    fn custom_design_patterns() {
        let kind = DesignKind::Custom {
            patterns: vec![vec![1], vec![1, 3]],
        };
        let q = generate_design(&kind, 4, 3).unwrap();
        assert_eq!(q.row_set(1), FactorSet::from_factors([0, 2]));
        let bad = DesignKind::Custom {
            patterns: vec![vec![4]],
        };
        assert!(generate_design(&bad, 4, 3).is_err());
    }

    #[test]
    fn ball_samples_respect_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for dist in [
            BallDistribution::UniformBall,
            BallDistribution::UniformSphere,
            BallDistribution::TruncatedNormal,
        ] {
            let draws = sample_ball(500, 4, 2.5, dist, &mut rng);
            for i in 0..draws.nrows() {
                let norm: f64 = draws.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm <= 2.5 + 1e-12, "{dist:?} norm {norm}");
            }
        }
    }

    #[test]
    fn ball_mean_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = sample_ball(100_000, 3, 2.0, BallDistribution::UniformBall, &mut rng);
        for k in 0..3 {
            let mean = draws.column(k).sum() / draws.nrows() as f64;
            // Per-coordinate sd of the uniform ball of radius 2 in R^3 is
            // 2/sqrt(5); four standard errors of the mean.
            let se = 2.0 / 5.0f64.sqrt() / (draws.nrows() as f64).sqrt();
            assert!(mean.abs() < 4.0 * se, "column {k} mean {mean}");
        }
    }

    #[test]
    fn one_dimensional_ball_is_uniform_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let draws = sample_ball(100_000, 1, 1.0, BallDistribution::UniformBall, &mut rng);
        let mean_abs = draws.iter().map(|v| v.abs()).sum::<f64>() / draws.len() as f64;
        // |x| for x uniform on [-1, 1] has mean 1/2 and sd 1/sqrt(12).
        let se = (1.0f64 / 12.0).sqrt() / (draws.len() as f64).sqrt();
        assert!((mean_abs - 0.5).abs() < 4.0 * se, "mean |x| = {mean_abs}");
    }

    #[test]
    fn apply_design_zeroes_and_identity() {
        let q = DesignMatrix::new(ndarray::array![[0, 1]]).unwrap();
        let raw = ndarray::array![[3.0, 4.0]];
        let out = apply_design(&raw, &q).unwrap();
        assert_eq!(out, ndarray::array![[0.0, 4.0]]);
        let q_full = DesignMatrix::new(ndarray::array![[1, 1]]).unwrap();
        assert_eq!(apply_design(&raw, &q_full).unwrap(), raw);
        let q_none = DesignMatrix::new(ndarray::array![[1, 0], [0, 0]]);
        // all-zero rows permitted
        assert!(q_none.is_ok());
    }

    #[test]
    fn mask_full_and_concentration() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let full = generate_mask(200.0 * 100.0, 200, 100, &mut rng).unwrap();
        assert!(full.iter().all(|&b| b));
        let half = generate_mask(10_000.0, 200, 100, &mut rng).unwrap();
        let observed = half.iter().filter(|&&b| b).count() as f64;
        let sd = (20_000.0f64 * 0.25).sqrt();
        assert!((observed - 10_000.0).abs() < 4.0 * sd, "observed {observed}");
        assert!(generate_mask(0.0, 10, 10, &mut rng).is_err());
        assert!(generate_mask(101.0, 10, 10, &mut rng).is_err());
    }

    fn tiny_study() -> StudyConfig {
        StudyConfig {
            family: FamilyKind::Gaussian,
            gaussian_variance: 1.0,
            n_factors: 2,
            design: DesignKind::Simple,
            j_grid: vec![8, 12],
            n_rule: SampleSizeRule::Multiplier(5.0),
            radius: 2.0,
            fit_radius_factor: 1.2,
            replications: 2,
            seed: 99,
            missing_n: None,
            classification_quantiles: (0.55, 0.65),
            ball: BallDistribution::UniformBall,
            fit: StudyFitOptions {
                max_outer_iters: 60,
                inner_steps: 5,
                tol_rel_obj: 1e-6,
            },
        }
    }

    #[test]
    fn study_produces_exhaustive_records() {
        let outcome = run_study(&tiny_study()).unwrap();
        assert_eq!(
            outcome.records.len() + outcome.failures.len(),
            2 * 2,
            "one record or failure per (J, replication)"
        );
        assert!(outcome.failures.is_empty());
        for r in &outcome.records {
            assert_eq!(r.sine_errors.len(), 2);
            for s in &r.sine_errors {
                assert!((0.0..=1.0).contains(s));
            }
            assert!(r.frobenius_scaled >= 0.0);
        }
    }

    #[test]
    fn study_is_deterministic() {
        let a = run_study(&tiny_study()).unwrap();
        let b = run_study(&tiny_study()).unwrap();
        assert_eq!(tidy_rows(&a.records).len(), tidy_rows(&b.records).len());
        for (x, y) in tidy_rows(&a.records).iter().zip(tidy_rows(&b.records).iter()) {
            assert_eq!(x.metric, y.metric);
            assert!(
                x.value == y.value || (x.value.is_nan() && y.value.is_nan()),
                "{}: {} vs {}",
                x.metric,
                x.value,
                y.value
            );
        }
    }

    #[test]
    fn aggregate_covers_every_metric_and_j() {
        let outcome = run_study(&tiny_study()).unwrap();
        let agg = aggregate(&outcome.records);
        for j in [8usize, 12] {
            for metric in ["frobenius_scaled", "sine_factor_1", "kendall_normalized"] {
                assert!(
                    aggregate_median(&agg, j, metric).is_some(),
                    "missing {metric} at J={j}"
                );
            }
        }
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{
            "family": "bernoulli",
            "n_factors": 2,
            "design": {"kind": "nested"},
            "j_grid": [100],
            "n_rule": {"explicit": [500]},
            "radius": 3.0,
            "replications": 5,
            "seed": 7
        }"#;
        let config = StudyConfig::from_json(json).unwrap();
        assert_eq!(config.family, FamilyKind::Bernoulli);
        assert_eq!(config.design, DesignKind::Nested);
        assert_eq!(config.sample_size(0), 500);
        assert_abs_diff_eq!(config.fit_radius_factor, 1.2);
        assert_eq!(config.classification_quantiles, (0.55, 0.65));
        let out = serde_json::to_string(&config).unwrap();
        let back = StudyConfig::from_json(&out).unwrap();
        assert_eq!(back.design, config.design);
    }
}
