//! Constrained joint maximum-likelihood estimation by alternating
//! minimization: a scores block and a loadings block, each doing a fixed
//! number of backtracking projected-gradient steps per outer iteration, with
//! closed-form projections onto the norm ball and the design zero pattern.
//! Variants cover a pinned intercept column and missing data.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::design::DesignMatrix;
use crate::model::{ModelFamily, ResponseData};
use crate::numeric::pairwise_sum_by;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("intercept mode requires every item to load on factor 1, but item {item} does not")]
    InterceptDesign { item: usize },
    #[error("objective became non-finite at outer iteration {iter}")]
    Diverged { iter: usize },
}

/// Backtracking line-search parameters for the inner projected-gradient steps.
#[derive(Clone, Copy, Debug)]
pub struct LineSearchConfig {
    /// Multiplicative step shrink factor, in (0, 1).
    pub backtrack: f64,
    /// First trial step length.
    pub initial_step: f64,
    /// Maximum number of shrinks before an update is declared stalled.
    pub max_halvings: usize,
    /// Sufficient-decrease parameter of the acceptance test.
    pub sufficient_decrease: f64,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            backtrack: 0.5,
            initial_step: 1.0,
            max_halvings: 50,
            sufficient_decrease: 1e-4,
        }
    }
}

/// Configuration of one fit.
#[derive(Clone, Copy, Debug)]
pub struct FitConfig {
    /// Number of latent factors K.
    pub n_factors: usize,
    /// Ball radius constraining every score row and loading row.
    pub radius: f64,
    pub max_outer_iters: usize,
    /// Projected-gradient steps per row within one block update.
    pub inner_steps: usize,
    /// Stop when the relative decrease of the objective over one outer
    /// iteration falls below this.
    pub tol_rel_obj: f64,
    pub line_search: LineSearchConfig,
    /// Pin the first score column to 1 and center the remaining columns.
    pub intercept_mode: bool,
    /// Seed for the random initial point.
    pub seed: u64,
}

impl FitConfig {
    pub fn new(n_factors: usize, radius: f64) -> Self {
        FitConfig {
            n_factors,
            radius,
            max_outer_iters: 1000,
            inner_steps: 5,
            tol_rel_obj: 1e-7,
            line_search: LineSearchConfig::default(),
            intercept_mode: false,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), FitError> {
        if self.n_factors == 0 {
            return Err(FitError::BadConfig("need at least one factor".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(FitError::BadConfig(format!(
                "ball radius must be positive and finite, got {}",
                self.radius
            )));
        }
        if self.intercept_mode && self.radius <= 1.0 {
            return Err(FitError::BadConfig(
                "intercept mode pins a coordinate at 1, so the ball radius must exceed 1".into(),
            ));
        }
        if self.tol_rel_obj.is_nan() || self.tol_rel_obj <= 0.0 {
            return Err(FitError::BadConfig("tol_rel_obj must be positive".into()));
        }
        if self.max_outer_iters == 0 || self.inner_steps == 0 {
            return Err(FitError::BadConfig(
                "iteration counts must be at least 1".into(),
            ));
        }
        let ls = &self.line_search;
        if !(ls.backtrack > 0.0 && ls.backtrack < 1.0) {
            return Err(FitError::BadConfig(
                "backtrack factor must lie in (0, 1)".into(),
            ));
        }
        if !(ls.initial_step > 0.0 && ls.initial_step.is_finite()) {
            return Err(FitError::BadConfig("initial step must be positive".into()));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 1.0) {
            return Err(FitError::BadConfig(
                "sufficient-decrease parameter must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Result of a fit: constrained estimates, the objective trace (the
/// minimized negative log-likelihood after initialization and after each
/// outer iteration), and convergence diagnostics.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub scores: Array2<f64>,
    pub loadings: Array2<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
    /// Row updates whose line search exhausted its halvings.
    pub stalled_updates: usize,
}

impl FitResult {
    /// Estimated natural-parameter matrix `scores * loadings^T`.
    pub fn natural_parameters(&self) -> Array2<f64> {
        self.scores.dot(&self.loadings.t())
    }
}

/// Which coordinates a row update may move.
enum FreeMask<'a> {
    All,
    ExceptFirst,
    PerRow(&'a Array2<bool>),
}

impl FreeMask<'_> {
    fn fill(&self, row: usize, out: &mut [bool]) {
        match self {
            FreeMask::All => out.fill(true),
            FreeMask::ExceptFirst => {
                out.fill(true);
                out[0] = false;
            }
            FreeMask::PerRow(m) => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = m[[row, k]];
                }
            }
        }
    }
}

/// Projects a coefficient row onto its constraint set: optionally pin the
/// first coordinate at 1 (scaling the rest into the remaining budget), else
/// scale the whole row onto the ball. Zero coordinates stay exactly zero.
fn project_row(x: &mut [f64], radius: f64, pinned_first: bool) {
    if pinned_first {
        x[0] = 1.0;
        let budget_sq = radius * radius - 1.0;
        let tail_sq: f64 = x[1..].iter().map(|v| v * v).sum();
        if tail_sq > budget_sq {
            let scale = (budget_sq / tail_sq).sqrt();
            for v in &mut x[1..] {
                *v *= scale;
            }
        }
    } else {
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        if norm_sq > radius * radius {
            let scale = radius / norm_sq.sqrt();
            for v in x.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// One row's slice of the separable objective: responses along the opposite
/// dimension, the fixed block, and the family.
struct RowProblem<'a> {
    y: &'a [f64],
    mask: Option<&'a [bool]>,
    basis: &'a [f64],
    n_factors: usize,
    family: ModelFamily,
}

impl RowProblem<'_> {
    #[inline]
    fn observed(&self, l: usize) -> bool {
        self.mask.map(|m| m[l]).unwrap_or(true)
    }

    /// Negative log-likelihood contribution of this row at coefficients `x`,
    /// accumulated with the deterministic pairwise tree.
    fn objective(&self, x: &[f64]) -> f64 {
        let k = self.n_factors;
        pairwise_sum_by(self.y.len(), &|l| {
            if self.observed(l) {
                let b = &self.basis[l * k..(l + 1) * k];
                let m: f64 = b.iter().zip(x).map(|(a, t)| a * t).sum();
                self.family.cumulant(m) - self.y[l] * m
            } else {
                0.0
            }
        })
    }

    /// Objective and gradient in one pass, sharing each cell's
    /// exponential. The returned objective is bit-identical to
    /// [`Self::objective`]: same per-cell terms, same pairwise tree.
    fn objective_and_gradient(
        &self,
        x: &[f64],
        free: &[bool],
        terms: &mut [f64],
        grad: &mut [f64],
    ) -> f64 {
        let k = self.n_factors;
        grad.fill(0.0);
        let chunks = self.basis.chunks_exact(k);
        for (l, (term, b)) in terms.iter_mut().zip(chunks).enumerate() {
            if !self.observed(l) {
                *term = 0.0;
                continue;
            }
            let m: f64 = b.iter().zip(x).map(|(a, t)| a * t).sum();
            let (bm, mu) = self.family.cumulant_and_mean(m);
            *term = bm - self.y[l] * m;
            let resid = mu - self.y[l];
            for (g, &bk) in grad.iter_mut().zip(b) {
                *g += resid * bk;
            }
        }
        for (g, &f) in grad.iter_mut().zip(free) {
            if !f {
                *g = 0.0;
            }
        }
        crate::numeric::pairwise_sum(terms)
    }
}

/// Per-thread scratch space for row updates.
struct RowBuffers {
    terms: Vec<f64>,
    grad: Vec<f64>,
    trial_grad: Vec<f64>,
    cand: Vec<f64>,
}

impl RowBuffers {
    fn new(row_len: usize, n_factors: usize) -> Self {
        RowBuffers {
            terms: vec![0.0; row_len],
            grad: vec![0.0; n_factors],
            trial_grad: vec![0.0; n_factors],
            cand: vec![0.0; n_factors],
        }
    }
}

/// Runs `inner_steps` backtracking projected-gradient steps on one row.
/// Returns the updated row, whether any line search stalled, and the step
/// length to warm-start this row's next update.
///
/// Backtracking restarts from twice the last accepted step (capped at the
/// configured initial step) rather than from the top every time, which
/// avoids re-paying the full descent to the row's step scale on every
/// update. Each trial evaluates objective and gradient together, so an
/// accepted candidate's gradient is already in hand for the next step.
#[allow(clippy::too_many_arguments)]
fn update_row(
    problem: &RowProblem<'_>,
    start: &[f64],
    free: &[bool],
    radius: f64,
    pinned_first: bool,
    cfg: &FitConfig,
    warm_step: f64,
    bufs: &mut RowBuffers,
) -> (Vec<f64>, bool, f64) {
    let ls = &cfg.line_search;
    let mut x = start.to_vec();
    let mut fx = problem.objective_and_gradient(&x, free, &mut bufs.terms, &mut bufs.grad);
    let mut stalled = false;
    let mut next_step = warm_step.min(ls.initial_step);
    for _ in 0..cfg.inner_steps {
        if bufs.grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut t = next_step;
        let mut accepted = false;
        let mut blocked = false;
        for _ in 0..=ls.max_halvings {
            for ((c, &xi), &g) in bufs.cand.iter_mut().zip(&x).zip(bufs.grad.iter()) {
                *c = xi - t * g;
            }
            // An overflowing gradient step cannot be projected meaningfully;
            // treat it as a failed trial.
            if !bufs.cand.iter().all(|v| v.is_finite()) {
                t *= ls.backtrack;
                continue;
            }
            project_row(&mut bufs.cand, radius, pinned_first);
            if bufs.cand == x {
                // The projection absorbs the whole step: this row is
                // stationary under its constraints.
                blocked = true;
                break;
            }
            let fc = problem.objective_and_gradient(
                &bufs.cand,
                free,
                &mut bufs.terms,
                &mut bufs.trial_grad,
            );
            let dir: f64 = bufs
                .grad
                .iter()
                .zip(bufs.cand.iter().zip(&x))
                .map(|(g, (c, xi))| g * (c - xi))
                .sum();
            if fc.is_finite() && fc <= fx + ls.sufficient_decrease * dir {
                x.copy_from_slice(&bufs.cand);
                std::mem::swap(&mut bufs.grad, &mut bufs.trial_grad);
                fx = fc;
                accepted = true;
                next_step = (2.0 * t).min(ls.initial_step);
                break;
            }
            t *= ls.backtrack;
        }
        if blocked {
            break;
        }
        if !accepted {
            stalled = true;
            break;
        }
    }
    (x, stalled, next_step)
}

/// Applies one block update: every row of `current` is updated independently
/// (and in parallel) against the fixed `basis`. Row responses are the rows
/// of `y` in this orientation. `steps` carries each row's warm-start step
/// length across calls.
#[allow(clippy::too_many_arguments)]
fn update_block(
    y: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    current: &Array2<f64>,
    basis: &Array2<f64>,
    family: ModelFamily,
    free: &FreeMask<'_>,
    pinned_first: bool,
    cfg: &FitConfig,
    steps: &mut [f64],
) -> (Array2<f64>, usize) {
    let (n_rows, k) = current.dim();
    let row_len = y.ncols();
    let basis_slice = basis.as_slice().expect("standard layout");
    let results: Vec<(Vec<f64>, bool)> = steps
        .par_iter_mut()
        .enumerate()
        .map_init(
            || (RowBuffers::new(row_len, k), vec![false; k]),
            |(bufs, free_row), (i, step)| {
                let problem = RowProblem {
                    y: y.row(i).to_slice().expect("standard layout"),
                    mask: mask.map(|m| m.row(i).to_slice().expect("standard layout")),
                    basis: basis_slice,
                    n_factors: k,
                    family,
                };
                free.fill(i, free_row);
                let start = current.row(i).to_slice().expect("standard layout");
                let (row, stalled, next_step) = update_row(
                    &problem,
                    start,
                    free_row,
                    cfg.radius,
                    pinned_first,
                    cfg,
                    *step,
                    bufs,
                );
                *step = next_step;
                (row, stalled)
            },
        )
        .collect();
    let mut updated = Array2::zeros((n_rows, k));
    let mut stalls = 0;
    for (i, (row, stalled)) in results.into_iter().enumerate() {
        for (kk, v) in row.into_iter().enumerate() {
            updated[[i, kk]] = v;
        }
        stalls += stalled as usize;
    }
    (updated, stalls)
}

/// Full objective (negative log-likelihood), evaluated row by row with the
/// same pairwise accumulation the score-block line searches use.
fn objective(
    y: &Array2<f64>,
    mask: Option<&Array2<bool>>,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    family: ModelFamily,
) -> f64 {
    let n = y.nrows();
    let k = theta.ncols();
    let basis = loadings.as_slice().expect("standard layout");
    let row_values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let problem = RowProblem {
                y: y.row(i).to_slice().expect("standard layout"),
                mask: mask.map(|m| m.row(i).to_slice().expect("standard layout")),
                basis,
                n_factors: k,
                family,
            };
            problem.objective(theta.row(i).to_slice().expect("standard layout"))
        })
        .collect();
    pairwise_sum_by(n, &|i| row_values[i])
}

/// Residual drift below which latent columns count as centered.
const CENTERING_TOL: f64 = 0.5e-8;

/// Means of the latent score columns (2..K).
fn latent_column_means(theta: &Array2<f64>) -> Vec<f64> {
    let (n, k) = theta.dim();
    (0..k)
        .map(|kk| {
            if kk == 0 {
                0.0
            } else {
                pairwise_sum_by(n, &|i| theta[[i, kk]]) / n as f64
            }
        })
        .collect()
}

/// Per-item intercept compensation for a mean shift `mu`: adding
/// `shift[j]` to loading column 1 leaves every natural parameter unchanged
/// when the score columns are shifted down by `mu`.
fn compensation_shifts(loadings: &Array2<f64>, mu: &[f64]) -> Vec<f64> {
    (0..loadings.nrows())
        .map(|j| (1..loadings.ncols()).map(|kk| loadings[[j, kk]] * mu[kk]).sum())
        .collect()
}

/// Whether shifting by `lambda * mu` (with the matching intercept
/// compensation) keeps every score and loading row inside the ball.
fn centering_feasible(
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    mu: &[f64],
    shifts: &[f64],
    radius: f64,
    lambda: f64,
) -> bool {
    let (n, k) = theta.dim();
    let r_sq = radius * radius;
    for i in 0..n {
        let mut norm_sq = 1.0;
        for kk in 1..k {
            let v = theta[[i, kk]] - lambda * mu[kk];
            norm_sq += v * v;
        }
        if norm_sq > r_sq {
            return false;
        }
    }
    for j in 0..loadings.nrows() {
        let first = loadings[[j, 0]] + lambda * shifts[j];
        let mut norm_sq = first * first;
        for kk in 1..k {
            norm_sq += loadings[[j, kk]] * loadings[[j, kk]];
        }
        if norm_sq > r_sq {
            return false;
        }
    }
    true
}

fn apply_centering(theta: &mut Array2<f64>, loadings: &mut Array2<f64>, mu: &[f64], shifts: &[f64], lambda: f64) {
    let (n, k) = theta.dim();
    for i in 0..n {
        for kk in 1..k {
            theta[[i, kk]] -= lambda * mu[kk];
        }
    }
    for j in 0..loadings.nrows() {
        loadings[[j, 0]] += lambda * shifts[j];
    }
}

/// In-loop centering step: shifts the latent score columns toward mean zero,
/// folding the shift into the intercept loadings so the fitted natural
/// parameters (and hence the objective) are unchanged. The shift is scaled
/// down just enough to keep every row inside the ball, so no projection is
/// ever needed and the objective trace stays monotone; any residual drift is
/// removed exactly at exit.
fn center_scores_with_intercept(
    theta: &mut Array2<f64>,
    loadings: &mut Array2<f64>,
    radius: f64,
) {
    let k = theta.ncols();
    if k < 2 {
        return;
    }
    let mu = latent_column_means(theta);
    if mu.iter().all(|m| m.abs() <= CENTERING_TOL) {
        return;
    }
    let shifts = compensation_shifts(loadings, &mu);
    let lambda = if centering_feasible(theta, loadings, &mu, &shifts, radius, 1.0) {
        1.0
    } else {
        // The feasible set of shift fractions is an interval containing 0;
        // bisect for the largest feasible fraction.
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if centering_feasible(theta, loadings, &mu, &shifts, radius, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        log::debug!("ball constraint tempered the centering shift to {lo:.3}");
        lo
    };
    if lambda > 0.0 {
        apply_centering(theta, loadings, &mu, &shifts, lambda);
    }
}

/// Exit-time centering: enforces mean-zero latent columns exactly,
/// re-projecting any rows the compensation pushes outside the ball and
/// repeating until the drift is gone. Runs after the last traced objective
/// value, so monotonicity of the trace is unaffected.
fn enforce_exit_centering(theta: &mut Array2<f64>, loadings: &mut Array2<f64>, radius: f64) {
    let (n, k) = theta.dim();
    if k < 2 {
        return;
    }
    for _ in 0..50 {
        let mu = latent_column_means(theta);
        if mu.iter().all(|m| m.abs() <= CENTERING_TOL) {
            return;
        }
        let shifts = compensation_shifts(loadings, &mu);
        apply_centering(theta, loadings, &mu, &shifts, 1.0);
        let mut projected = 0usize;
        let r_sq = radius * radius;
        for i in 0..n {
            let norm_sq: f64 = theta.row(i).iter().map(|v| v * v).sum();
            if norm_sq > r_sq {
                project_row(theta.row_mut(i).into_slice().expect("standard layout"), radius, true);
                projected += 1;
            }
        }
        for j in 0..loadings.nrows() {
            let norm_sq: f64 = loadings.row(j).iter().map(|v| v * v).sum();
            if norm_sq > r_sq {
                project_row(
                    loadings.row_mut(j).into_slice().expect("standard layout"),
                    radius,
                    false,
                );
                projected += 1;
            }
        }
        if projected == 0 {
            return;
        }
    }
    let residual = latent_column_means(theta)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    log::warn!("exit centering left residual column-mean drift {residual:.3e}");
}

fn transpose_mask(mask: Option<&Array2<bool>>) -> Option<Array2<bool>> {
    mask.map(|m| {
        let mut t = Array2::from_elem((m.ncols(), m.nrows()), false);
        for ((i, j), &v) in m.indexed_iter() {
            t[[j, i]] = v;
        }
        t
    })
}

fn design_free_mask(q: &DesignMatrix) -> Array2<bool> {
    let mut free = Array2::from_elem((q.n_items(), q.n_factors()), false);
    for j in 0..q.n_items() {
        for k in 0..q.n_factors() {
            free[[j, k]] = q.loads(j, k);
        }
    }
    free
}

fn check_fit_inputs(
    data: &ResponseData,
    q: &DesignMatrix,
    config: &FitConfig,
) -> Result<(), FitError> {
    config.validate()?;
    if q.n_items() != data.n_cols() {
        return Err(FitError::ShapeMismatch {
            context: format!(
                "data has {} columns but the design has {} items",
                data.n_cols(),
                q.n_items()
            ),
        });
    }
    if q.n_factors() != config.n_factors {
        return Err(FitError::ShapeMismatch {
            context: format!(
                "config asks for {} factors but the design has {}",
                config.n_factors,
                q.n_factors()
            ),
        });
    }
    if config.intercept_mode {
        for j in 0..q.n_items() {
            if !q.loads(j, 0) {
                return Err(FitError::InterceptDesign { item: j });
            }
        }
    }
    Ok(())
}

/// Seeded random starting point: entries uniform on [-0.5, 0.5], design
/// zeros applied, rows projected onto the ball, and (in intercept mode) the
/// first score column pinned at 1 with the rest centered.
fn initialize(
    data: &ResponseData,
    q: &DesignMatrix,
    config: &FitConfig,
) -> (Array2<f64>, Array2<f64>) {
    let (n, j_count, k) = (data.n_rows(), data.n_cols(), config.n_factors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = Array2::zeros((n, k));
    for v in theta.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let mut loadings = Array2::zeros((j_count, k));
    for v in loadings.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for jj in 0..j_count {
        for kk in 0..k {
            if !q.loads(jj, kk) {
                loadings[[jj, kk]] = 0.0;
            }
        }
    }
    if config.intercept_mode {
        theta.column_mut(0).fill(1.0);
        for kk in 1..k {
            let mean = pairwise_sum_by(n, &|i| theta[[i, kk]]) / n as f64;
            for i in 0..n {
                theta[[i, kk]] -= mean;
            }
        }
    }
    for i in 0..n {
        let slice = theta.row_mut(i).into_slice().expect("standard layout");
        project_row(slice, config.radius, config.intercept_mode);
    }
    for jj in 0..j_count {
        let slice = loadings.row_mut(jj).into_slice().expect("standard layout");
        project_row(slice, config.radius, false);
    }
    (theta, loadings)
}

/// Fits the constrained joint maximum-likelihood estimator by alternating
/// block updates until the relative objective decrease falls below
/// `tol_rel_obj` or `max_outer_iters` is reached.
///
/// Missing entries (per the data's mask) contribute nothing to the
/// objective or gradients. The objective trace is non-increasing, every
/// iterate is feasible, and results are bit-identical across reruns with the
/// same seed regardless of thread count.
pub fn fit(
    data: &ResponseData,
    q: &DesignMatrix,
    family: ModelFamily,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    check_fit_inputs(data, q, config)?;
    let (mut theta, mut loadings) = initialize(data, q, config);
    let y = data.values();
    let mask = data.mask();
    let y_t = y.t().as_standard_layout().to_owned();
    let mask_t = transpose_mask(mask);
    let loading_free = design_free_mask(q);
    let theta_free = if config.intercept_mode {
        FreeMask::ExceptFirst
    } else {
        FreeMask::All
    };

    let mut trace = vec![objective(y, mask, &theta, &loadings, family)];
    if !trace[0].is_finite() {
        return Err(FitError::Diverged { iter: 0 });
    }
    let mut theta_steps = vec![config.line_search.initial_step; data.n_rows()];
    let mut loading_steps = vec![config.line_search.initial_step; data.n_cols()];
    let mut converged = false;
    let mut iters_used = 0;
    let mut stalled_updates = 0;
    for outer in 1..=config.max_outer_iters {
        let (new_theta, stalls_t) = update_block(
            y,
            mask,
            &theta,
            &loadings,
            family,
            &theta_free,
            config.intercept_mode,
            config,
            &mut theta_steps,
        );
        theta = new_theta;
        if config.intercept_mode {
            center_scores_with_intercept(&mut theta, &mut loadings, config.radius);
        }
        let (new_loadings, stalls_a) = update_block(
            &y_t,
            mask_t.as_ref(),
            &loadings,
            &theta,
            family,
            &FreeMask::PerRow(&loading_free),
            false,
            config,
            &mut loading_steps,
        );
        loadings = new_loadings;
        stalled_updates += stalls_t + stalls_a;

        let f = objective(y, mask, &theta, &loadings, family);
        if !f.is_finite() {
            return Err(FitError::Diverged { iter: outer });
        }
        let prev = *trace.last().expect("trace is non-empty");
        trace.push(f);
        iters_used = outer;
        if prev - f <= config.tol_rel_obj * prev.abs() {
            converged = true;
            break;
        }
    }
    if config.intercept_mode {
        enforce_exit_centering(&mut theta, &mut loadings, config.radius);
    }
    Ok(FitResult {
        scores: theta,
        loadings,
        objective_trace: trace,
        converged,
        iters_used,
        stalled_updates,
    })
}

/// One scores-block update against fixed loadings; rows move independently.
/// Returns the updated scores and the number of stalled row updates.
pub fn update_scores_block(
    data: &ResponseData,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    family: ModelFamily,
    config: &FitConfig,
) -> Result<(Array2<f64>, usize), FitError> {
    config.validate()?;
    if theta.nrows() != data.n_rows() || loadings.nrows() != data.n_cols() {
        return Err(FitError::ShapeMismatch {
            context: "scores/loadings do not conform to the data".into(),
        });
    }
    let free = if config.intercept_mode {
        FreeMask::ExceptFirst
    } else {
        FreeMask::All
    };
    let mut steps = vec![config.line_search.initial_step; data.n_rows()];
    Ok(update_block(
        data.values(),
        data.mask(),
        theta,
        loadings,
        family,
        &free,
        config.intercept_mode,
        config,
        &mut steps,
    ))
}

/// One loadings-block update against fixed scores: design-constrained
/// coordinates are pinned at zero and rows are ball-projected.
pub fn update_loadings_block(
    data: &ResponseData,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    q: &DesignMatrix,
    family: ModelFamily,
    config: &FitConfig,
) -> Result<(Array2<f64>, usize), FitError> {
    config.validate()?;
    if theta.nrows() != data.n_rows()
        || loadings.nrows() != data.n_cols()
        || q.n_items() != loadings.nrows()
    {
        return Err(FitError::ShapeMismatch {
            context: "scores/loadings/design do not conform to the data".into(),
        });
    }
    let y_t = data.values().t().as_standard_layout().to_owned();
    let mask_t = transpose_mask(data.mask());
    let free = design_free_mask(q);
    let mut steps = vec![config.line_search.initial_step; data.n_cols()];
    Ok(update_block(
        &y_t,
        mask_t.as_ref(),
        loadings,
        theta,
        family,
        &FreeMask::PerRow(&free),
        false,
        config,
        &mut steps,
    ))
}

/// `fit` with the intercept variant: the first score column is pinned at 1
/// (its loadings act as intercepts) and the remaining score columns are
/// centered to mean zero after every scores block. Requires `q` to set
/// factor 1 on every item.
pub fn fit_with_intercept(
    data: &ResponseData,
    q: &DesignMatrix,
    family: ModelFamily,
    config: &FitConfig,
) -> Result<FitResult, FitError> {
    let mut config = *config;
    config.intercept_mode = true;
    fit(data, q, family, &config)
}

/// Largest trace increase, for monotonicity checks: a correct fit never
/// increases the objective beyond accumulated rounding.
pub fn max_trace_increase(trace: &[f64]) -> f64 {
    trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
}
