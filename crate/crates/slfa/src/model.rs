//! Exponential-family measurement models with linear natural parameter
//! `m_ij = <a_j, theta_i>`: cumulant functions, masked joint log-likelihood,
//! analytic gradients, and samplers for the Gaussian, Bernoulli-logit, and
//! Poisson-log families.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::DesignMatrix;
use crate::numeric::pairwise_sum_by;

/// Natural parameters beyond this magnitude overflow the Poisson sampler.
const POISSON_MAX_LOG_RATE: f64 = 700.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("natural parameter must be finite, got {0}")]
    NonFiniteParameter(f64),
    #[error("dispersion must be positive and finite, got {0}")]
    InvalidDispersion(f64),
    #[error("value {value} at ({row}, {col}) is outside the {family} domain")]
    DomainMismatch {
        row: usize,
        col: usize,
        value: f64,
        family: &'static str,
    },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
    #[error("Poisson rate exp({0}) overflows")]
    RateOverflow(f64),
}

/// Which member of the exponential family generates the responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl FamilyKind {
    pub fn name(&self) -> &'static str {
        match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Bernoulli => "bernoulli",
            FamilyKind::Poisson => "poisson",
        }
    }
}

/// An exponential-family descriptor: the family kind plus its dispersion.
///
/// The Bernoulli and Poisson families have dispersion fixed at 1; the
/// Gaussian dispersion is the noise variance. The cumulant of every kind is
/// finite on all of the real line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    kind: FamilyKind,
    dispersion: f64,
}

impl ModelFamily {
    /// Gaussian family with noise variance `variance`.
    pub fn gaussian(variance: f64) -> Result<Self, ModelError> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(ModelError::InvalidDispersion(variance));
        }
        Ok(ModelFamily {
            kind: FamilyKind::Gaussian,
            dispersion: variance,
        })
    }

    pub fn bernoulli() -> Self {
        ModelFamily {
            kind: FamilyKind::Bernoulli,
            dispersion: 1.0,
        }
    }

    pub fn poisson() -> Self {
        ModelFamily {
            kind: FamilyKind::Poisson,
            dispersion: 1.0,
        }
    }

    /// Unit-variance Gaussian, Bernoulli, or Poisson by kind.
    pub fn standard(kind: FamilyKind) -> Self {
        match kind {
            FamilyKind::Gaussian => ModelFamily::gaussian(1.0).expect("unit variance is valid"),
            FamilyKind::Bernoulli => ModelFamily::bernoulli(),
            FamilyKind::Poisson => ModelFamily::poisson(),
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// Cumulant function b(m). The dispersion scaling is dropped throughout
    /// the optimization objective since it does not move the argmin.
    ///
    /// The Bernoulli branch evaluates `log(1 + exp(m))` as
    /// `m + log1p(exp(-m))` for positive `m`, which never overflows.
    #[inline]
    pub fn cumulant(&self, m: f64) -> f64 {
        assert!(m.is_finite(), "natural parameter must be finite, got {m}");
        match self.kind {
            FamilyKind::Gaussian => 0.5 * m * m,
            FamilyKind::Bernoulli => {
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            }
            FamilyKind::Poisson => m.exp(),
        }
    }

    /// Conditional mean b'(m): identity, logistic, or exponential link inverse.
    #[inline]
    pub fn mean(&self, m: f64) -> f64 {
        assert!(m.is_finite(), "natural parameter must be finite, got {m}");
        match self.kind {
            FamilyKind::Gaussian => m,
            FamilyKind::Bernoulli => logistic(m),
            FamilyKind::Poisson => m.exp(),
        }
    }

    /// Cumulant and mean together, sharing the exponential; bit-identical
    /// to calling [`Self::cumulant`] and [`Self::mean`] separately.
    #[inline]
    pub fn cumulant_and_mean(&self, m: f64) -> (f64, f64) {
        assert!(m.is_finite(), "natural parameter must be finite, got {m}");
        match self.kind {
            FamilyKind::Gaussian => (0.5 * m * m, m),
            FamilyKind::Bernoulli => {
                if m > 0.0 {
                    let e = (-m).exp();
                    (m + e.ln_1p(), 1.0 / (1.0 + e))
                } else {
                    let e = m.exp();
                    (e.ln_1p(), e / (1.0 + e))
                }
            }
            FamilyKind::Poisson => {
                let e = m.exp();
                (e, e)
            }
        }
    }

    /// Conditional variance b''(m), up to the dispersion factor.
    #[inline]
    pub fn cumulant_second(&self, m: f64) -> f64 {
        assert!(m.is_finite(), "natural parameter must be finite, got {m}");
        match self.kind {
            FamilyKind::Gaussian => 1.0,
            FamilyKind::Bernoulli => {
                let p = logistic(m);
                p * (1.0 - p)
            }
            FamilyKind::Poisson => m.exp(),
        }
    }

    /// Draws one observation at natural parameter `m`.
    pub fn sample<R: Rng + ?Sized>(&self, m: f64, rng: &mut R) -> Result<f64, ModelError> {
        if !m.is_finite() {
            return Err(ModelError::NonFiniteParameter(m));
        }
        match self.kind {
            FamilyKind::Gaussian => {
                let normal = Normal::new(m, self.dispersion.sqrt())
                    .map_err(|_| ModelError::InvalidDispersion(self.dispersion))?;
                Ok(normal.sample(rng))
            }
            FamilyKind::Bernoulli => {
                let b = Bernoulli::new(logistic(m)).expect("logistic value is a probability");
                Ok(if b.sample(rng) { 1.0 } else { 0.0 })
            }
            FamilyKind::Poisson => {
                if m > POISSON_MAX_LOG_RATE {
                    return Err(ModelError::RateOverflow(m));
                }
                let p = Poisson::new(m.exp()).map_err(|_| ModelError::RateOverflow(m))?;
                Ok(p.sample(rng))
            }
        }
    }

    /// Whether `y` lies in the family's observation domain.
    pub fn value_in_domain(&self, y: f64) -> bool {
        match self.kind {
            FamilyKind::Gaussian => y.is_finite(),
            FamilyKind::Bernoulli => y == 0.0 || y == 1.0,
            FamilyKind::Poisson => y.is_finite() && y >= 0.0 && y.fract() == 0.0,
        }
    }
}

#[inline]
fn logistic(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// An N×J response matrix with an optional observation mask.
///
/// Values are only meaningful (and only read) where the mask is set; a
/// missing mask means fully observed. Observed values are validated against
/// the family's domain on construction.
#[derive(Clone, Debug)]
pub struct ResponseData {
    values: Array2<f64>,
    mask: Option<Array2<bool>>,
}

impl ResponseData {
    pub fn new(
        values: Array2<f64>,
        mask: Option<Array2<bool>>,
        family: ModelFamily,
    ) -> Result<Self, ModelError> {
        if let Some(mask) = &mask {
            if mask.dim() != values.dim() {
                return Err(ModelError::ShapeMismatch {
                    context: format!(
                        "mask is {:?} but values are {:?}",
                        mask.dim(),
                        values.dim()
                    ),
                });
            }
        }
        for ((i, j), &y) in values.indexed_iter() {
            let observed = mask.as_ref().map(|m| m[[i, j]]).unwrap_or(true);
            if observed && !family.value_in_domain(y) {
                return Err(ModelError::DomainMismatch {
                    row: i,
                    col: j,
                    value: y,
                    family: family.kind().name(),
                });
            }
        }
        Ok(ResponseData { values, mask })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().map(|m| m[[i, j]]).unwrap_or(true)
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[[i, j]]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> Option<&Array2<bool>> {
        self.mask.as_ref()
    }

    /// Number of observed cells.
    pub fn n_observed(&self) -> usize {
        match &self.mask {
            None => self.values.len(),
            Some(m) => m.iter().filter(|&&b| b).count(),
        }
    }

    /// Fraction of cells observed.
    pub fn observed_fraction(&self) -> f64 {
        self.n_observed() as f64 / self.values.len() as f64
    }
}

/// Natural-parameter matrix `M = Theta A^T` (rank at most K).
pub fn natural_parameters(theta: &Array2<f64>, loadings: &Array2<f64>) -> Array2<f64> {
    theta.dot(&loadings.t())
}

fn check_shapes(
    data: &ResponseData,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
) -> Result<(), ModelError> {
    if theta.nrows() != data.n_rows()
        || loadings.nrows() != data.n_cols()
        || theta.ncols() != loadings.ncols()
    {
        return Err(ModelError::ShapeMismatch {
            context: format!(
                "data {}x{}, scores {}x{}, loadings {}x{}",
                data.n_rows(),
                data.n_cols(),
                theta.nrows(),
                theta.ncols(),
                loadings.nrows(),
                loadings.ncols()
            ),
        });
    }
    Ok(())
}

/// Masked joint log-likelihood `sum_{observed} y*m - b(m)` up to the additive
/// term that does not depend on the parameters. Cells are accumulated with a
/// deterministic pairwise tree: within rows, then across rows.
pub fn log_likelihood(
    data: &ResponseData,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    family: ModelFamily,
) -> Result<f64, ModelError> {
    check_shapes(data, theta, loadings)?;
    let n = data.n_rows();
    let row_sums: Vec<f64> = (0..n)
        .map(|i| {
            let theta_i = theta.row(i);
            pairwise_sum_by(data.n_cols(), &|j| {
                if data.observed(i, j) {
                    let m = dot_views(theta_i, loadings.row(j));
                    data.value(i, j) * m - family.cumulant(m)
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(pairwise_sum_by(n, &|i| row_sums[i]))
}

#[inline]
fn dot_views(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Gradients of the joint log-likelihood with respect to the score and
/// loading matrices, with constrained coordinates zeroed: design zeros in the
/// loadings, and the pinned intercept column of the scores when
/// `intercept_mode` is set.
pub fn gradients(
    data: &ResponseData,
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    family: ModelFamily,
    q: Option<&DesignMatrix>,
    intercept_mode: bool,
) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
    check_shapes(data, theta, loadings)?;
    if let Some(q) = q {
        if q.n_items() != loadings.nrows() || q.n_factors() != loadings.ncols() {
            return Err(ModelError::ShapeMismatch {
                context: format!(
                    "design {}x{} does not match loadings {}x{}",
                    q.n_items(),
                    q.n_factors(),
                    loadings.nrows(),
                    loadings.ncols()
                ),
            });
        }
    }
    let (n, j_count) = (data.n_rows(), data.n_cols());
    let k = theta.ncols();
    let mut grad_theta = Array2::<f64>::zeros((n, k));
    let mut grad_loadings = Array2::<f64>::zeros((j_count, k));
    for i in 0..n {
        let theta_i = theta.row(i);
        for j in 0..j_count {
            if !data.observed(i, j) {
                continue;
            }
            let a_j = loadings.row(j);
            let m = dot_views(theta_i, a_j);
            let resid = data.value(i, j) - family.mean(m);
            for kk in 0..k {
                grad_theta[[i, kk]] += resid * a_j[kk];
                grad_loadings[[j, kk]] += resid * theta_i[kk];
            }
        }
    }
    if intercept_mode {
        grad_theta.column_mut(0).fill(0.0);
    }
    if let Some(q) = q {
        for j in 0..j_count {
            for kk in 0..k {
                if !q.loads(j, kk) {
                    grad_loadings[[j, kk]] = 0.0;
                }
            }
        }
    }
    Ok((grad_theta, grad_loadings))
}
