//! Subspace geometry: sine angles between vectors, principal angles between
//! subspaces, orthogonal projections, subspace intersection, and numeric
//! checks of the projector perturbation bound and the column-space angle
//! bound that underpin it.

use nalgebra::DMatrix;
use ndarray::Array2;
use thiserror::Error;

/// Principal angles below this threshold (radians) count as zero, both for
/// the smallest-positive-angle selection and for intersection membership.
/// Set well above the noise floor of double-precision SVD.
pub const DEFAULT_ANGLE_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("basis columns are not orthonormal (deviation {0:.2e})")]
    NotOrthonormal(f64),
    #[error("hypothesis violated: {0}")]
    HypothesisViolation(String),
    #[error("column index {index} out of range for {n_cols} columns")]
    ColumnOutOfRange { index: usize, n_cols: usize },
}

/// Sine of the angle between two nonzero vectors, clamped to `[0, 1]`.
pub fn sin_angle_vec(u: &[f64], v: &[f64]) -> Result<f64, LinalgError> {
    if u.len() != v.len() {
        return Err(LinalgError::LengthMismatch(u.len(), v.len()));
    }
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    if uu == 0.0 || vv == 0.0 {
        return Err(LinalgError::ZeroVector);
    }
    let uv: f64 = u.iter().zip(v).map(|(x, y)| x * y).sum();
    let cos2 = (uv * uv / (uu * vv)).clamp(0.0, 1.0);
    Ok((1.0 - cos2).sqrt().clamp(0.0, 1.0))
}

/// An orthonormal basis of a linear subspace of R^m.
///
/// A zero-dimensional basis (no columns) represents the trivial subspace.
#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    columns: DMatrix<f64>,
}

impl SubspaceBasis {
    /// Wraps an m×d matrix whose columns must already be orthonormal
    /// (Gram matrix within 1e-10 of the identity).
    pub fn new(columns: Array2<f64>) -> Result<Self, LinalgError> {
        let m = to_dmatrix(&columns);
        Self::from_orthonormal(m)
    }

    fn from_orthonormal(columns: DMatrix<f64>) -> Result<Self, LinalgError> {
        let gram = columns.transpose() * &columns;
        let mut deviation = 0.0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((gram[(i, j)] - target).abs());
            }
        }
        if deviation > 1e-10 {
            return Err(LinalgError::NotOrthonormal(deviation));
        }
        Ok(SubspaceBasis { columns })
    }

    /// Orthonormal basis of the column span of an arbitrary matrix, dropping
    /// directions whose singular value falls below the numerical-rank cut.
    pub fn from_span(matrix: &Array2<f64>) -> Self {
        Self::from_span_dmatrix(to_dmatrix(matrix))
    }

    fn from_span_dmatrix(m: DMatrix<f64>) -> Self {
        let (rows, cols) = (m.nrows(), m.ncols());
        if rows == 0 || cols == 0 {
            return SubspaceBasis {
                columns: DMatrix::zeros(rows, 0),
            };
        }
        let svd = m.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let cut = smax * rows.max(cols) as f64 * f64::EPSILON;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > cut && svd.singular_values[i] > 0.0)
            .collect();
        let mut columns = DMatrix::zeros(rows, keep.len());
        for (out, &i) in keep.iter().enumerate() {
            columns.set_column(out, &u.column(i));
        }
        SubspaceBasis { columns }
    }

    /// Basis spanned by the given standard unit vectors of R^m.
    pub fn coordinate(ambient: usize, axes: &[usize]) -> Self {
        let mut columns = DMatrix::zeros(ambient, axes.len());
        for (c, &axis) in axes.iter().enumerate() {
            columns[(axis, c)] = 1.0;
        }
        SubspaceBasis { columns }
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Orthogonal projector onto the subspace, as a dense m×m matrix.
    pub fn projector(&self) -> DMatrix<f64> {
        if self.dim() == 0 {
            return DMatrix::zeros(self.ambient_dim(), self.ambient_dim());
        }
        &self.columns * self.columns.transpose()
    }

    /// Residual of `v` after projecting onto the subspace.
    fn residual_norm(&self, v: &DMatrix<f64>) -> f64 {
        let proj = &self.columns * (self.columns.transpose() * v);
        (v - proj).norm()
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check_ambient(l: &SubspaceBasis, m: &SubspaceBasis) -> Result<(), LinalgError> {
    if l.ambient_dim() != m.ambient_dim() {
        return Err(LinalgError::AmbientMismatch(l.ambient_dim(), m.ambient_dim()));
    }
    Ok(())
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    sv
}

/// Spectral norm (largest singular value); zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values_desc(m).first().copied().unwrap_or(0.0)
}

/// Principal angles between two subspaces, in descending order, each in
/// `[0, pi/2]`. Returns `min(dim L, dim M)` angles.
///
/// Cosines come from the SVD of the cross-Gram matrix; angles below pi/4 are
/// refined through the sine route (singular values of `(I - P_L) M`), which
/// resolves near-zero angles far below the precision of `acos` near 1.
pub fn principal_angles(l: &SubspaceBasis, m: &SubspaceBasis) -> Result<Vec<f64>, LinalgError> {
    check_ambient(l, m)?;
    let p = l.dim().min(m.dim());
    if p == 0 {
        return Ok(Vec::new());
    }
    let cross = l.columns().transpose() * m.columns();
    let mut cosines = singular_values_desc(&cross);
    cosines.truncate(p);
    let residual = m.columns() - l.columns() * (l.columns().transpose() * m.columns());
    let mut sines = singular_values_desc(&residual);
    sines.reverse(); // ascending, pairing with descending cosines
    let mut angles: Vec<f64> = (0..p)
        .map(|i| {
            let c = cosines[i].clamp(0.0, 1.0);
            let s = sines.get(i).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            if c > std::f64::consts::FRAC_1_SQRT_2 {
                s.asin()
            } else {
                c.acos()
            }
        })
        .collect();
    angles.sort_by(|a, b| b.partial_cmp(a).expect("finite angles"));
    Ok(angles)
}

/// Sine of the largest principal angle, in the asymmetric convention
/// `max over unit u in M` of `min over v in L` of `sin(u, v)`: equals 1
/// whenever M has a direction orthogonal to L (in particular when
/// `dim M > dim L`).
pub fn sin_largest_principal(l: &SubspaceBasis, m: &SubspaceBasis) -> Result<f64, LinalgError> {
    check_ambient(l, m)?;
    if m.dim() == 0 {
        return Ok(0.0);
    }
    if l.dim() == 0 {
        return Ok(1.0);
    }
    let residual = m.columns() - l.columns() * (l.columns().transpose() * m.columns());
    Ok(spectral_norm(&residual).clamp(0.0, 1.0))
}

/// Smallest strictly positive principal angle, using `tol` (radians) as the
/// positivity cut; 0 when every angle is below the cut.
pub fn min_positive_angle_with(
    l: &SubspaceBasis,
    m: &SubspaceBasis,
    tol: f64,
) -> Result<f64, LinalgError> {
    let angles = principal_angles(l, m)?;
    let min = angles
        .into_iter()
        .filter(|&a| a > tol)
        .fold(f64::INFINITY, f64::min);
    Ok(if min.is_finite() { min } else { 0.0 })
}

/// `min_positive_angle_with` at the default positivity threshold.
pub fn min_positive_angle(l: &SubspaceBasis, m: &SubspaceBasis) -> Result<f64, LinalgError> {
    min_positive_angle_with(l, m, DEFAULT_ANGLE_TOL)
}

/// Sensitivity coefficient `2(1 + cos t) / (1 - cos t)^3` of the intersection
/// perturbation bound. Unbounded (infinite) at t = 0.
pub fn perturbation_coefficient(theta: f64) -> f64 {
    if theta == 0.0 {
        return f64::INFINITY;
    }
    let c = theta.cos();
    2.0 * (1.0 + c) / (1.0 - c).powi(3)
}

/// Orthonormal basis of the intersection of two subspaces: principal
/// directions whose angle is below `tol`.
pub fn intersect(
    l: &SubspaceBasis,
    m: &SubspaceBasis,
    tol: f64,
) -> Result<SubspaceBasis, LinalgError> {
    check_ambient(l, m)?;
    if l.dim() == 0 || m.dim() == 0 {
        return Ok(SubspaceBasis {
            columns: DMatrix::zeros(l.ambient_dim(), 0),
        });
    }
    let cross = l.columns().transpose() * m.columns();
    let svd = cross.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let candidates = l.columns() * u;
    // Membership by residual against M: the residual of a unit candidate is
    // the sine of its angle to M, accurate for tiny angles.
    let keep: Vec<usize> = (0..candidates.ncols())
        .filter(|&i| {
            let col = DMatrix::from_column_slice(
                candidates.nrows(),
                1,
                candidates.column(i).as_slice(),
            );
            m.residual_norm(&col) <= tol
        })
        .collect();
    let mut columns = DMatrix::zeros(l.ambient_dim(), keep.len());
    for (out, &i) in keep.iter().enumerate() {
        columns.set_column(out, &candidates.column(i));
    }
    Ok(SubspaceBasis { columns })
}

/// Outcome of a numeric inequality check: left side, right side, and whether
/// the inequality holds within a 1e-9 slack.
#[derive(Clone, Copy, Debug)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

const BOUND_SLACK: f64 = 1e-9;

/// Checks the intersection perturbation bound in its spectral-norm form:
///
/// `|P_{L' ∩ M'} - P_{L ∩ M}| <= 8 max{coef(L,M), coef(L',M')}
///   (|P_L - P_{L'}| + |P_M - P_{M'}|)`
///
/// where `coef` is `perturbation_coefficient` at the smallest positive
/// principal angle. An infinite coefficient makes the bound trivially true.
pub fn check_projector_perturbation_bound(
    l: &SubspaceBasis,
    m: &SubspaceBasis,
    l_prime: &SubspaceBasis,
    m_prime: &SubspaceBasis,
) -> Result<BoundCheck, LinalgError> {
    check_ambient(l, m)?;
    check_ambient(l, l_prime)?;
    check_ambient(l, m_prime)?;
    let lhs = spectral_norm(
        &(intersect(l_prime, m_prime, DEFAULT_ANGLE_TOL)?.projector()
            - intersect(l, m, DEFAULT_ANGLE_TOL)?.projector()),
    );
    let coef = perturbation_coefficient(min_positive_angle(l, m)?)
        .max(perturbation_coefficient(min_positive_angle(l_prime, m_prime)?));
    let delta = spectral_norm(&(l.projector() - l_prime.projector()))
        + spectral_norm(&(m.projector() - m_prime.projector()));
    let rhs = if coef.is_finite() {
        8.0 * coef * delta
    } else if delta == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let holds = !coef.is_finite() || lhs <= rhs + BOUND_SLACK;
    Ok(BoundCheck { lhs, rhs, holds })
}

/// Checks the angle bound between column spaces of two column subsets of a
/// matrix W:
///
/// `cos(theta_min_plus(R(W[S1]), R(W[S2]))) <= 1 - sigma_u^2 / |W|_2^2`
///
/// where `sigma_u` is the `|S1 ∪ S2|`-th singular value of the union block.
/// Requires both `S1 \ S2` and `S2 \ S1` to be nonempty.
pub fn check_column_space_angle_bound(
    w: &Array2<f64>,
    s1: &[usize],
    s2: &[usize],
) -> Result<BoundCheck, LinalgError> {
    for &c in s1.iter().chain(s2) {
        if c >= w.ncols() {
            return Err(LinalgError::ColumnOutOfRange {
                index: c,
                n_cols: w.ncols(),
            });
        }
    }
    let only_1 = s1.iter().any(|c| !s2.contains(c));
    let only_2 = s2.iter().any(|c| !s1.contains(c));
    if !only_1 || !only_2 {
        return Err(LinalgError::HypothesisViolation(
            "each column subset must contain a column the other lacks".into(),
        ));
    }
    let wm = to_dmatrix(w);
    if wm.iter().all(|&x| x == 0.0) {
        return Err(LinalgError::HypothesisViolation("W must be nonzero".into()));
    }
    let take = |cols: &[usize]| {
        let mut out = DMatrix::zeros(w.nrows(), cols.len());
        for (i, &c) in cols.iter().enumerate() {
            out.set_column(i, &wm.column(c));
        }
        out
    };
    let l = SubspaceBasis::from_span_dmatrix(take(s1));
    let m = SubspaceBasis::from_span_dmatrix(take(s2));
    let lhs = min_positive_angle(&l, &m)?.cos();
    let mut union: Vec<usize> = s1.to_vec();
    union.extend_from_slice(s2);
    union.sort_unstable();
    union.dedup();
    let block = take(&union);
    let sv = singular_values_desc(&block);
    let sigma_u = if block.nrows() < union.len() {
        0.0
    } else {
        sv.get(union.len() - 1).copied().unwrap_or(0.0)
    };
    let rhs = 1.0 - sigma_u * sigma_u / spectral_norm(&wm).powi(2);
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_SLACK,
    })
}
