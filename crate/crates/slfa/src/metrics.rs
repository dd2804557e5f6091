//! Factor-recovery metrics: per-factor sine error, sign alignment,
//! normalized scores, 1-D empirical Wasserstein distance, Kendall-tau ranking
//! error, indifference-zone classification error, and scaled Frobenius loss.

use ndarray::Array2;
use thiserror::Error;

use crate::linalg::{sin_angle_vec, LinalgError};
use crate::numeric::quantile_sorted;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sample lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("column {0} is zero; direction undefined")]
    ZeroColumn(usize),
    #[error("column index {index} out of range for {n_cols} columns")]
    ColumnOutOfRange { index: usize, n_cols: usize },
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("classification thresholds must satisfy lower < upper, got {lower} >= {upper}")]
    InvalidThresholds { lower: f64, upper: f64 },
    #[error(transparent)]
    Angle(#[from] LinalgError),
}

/// Scores normalized to squared norm N, optionally sign-aligned.
#[derive(Clone, Debug)]
pub struct NormalizedScores {
    values: Vec<f64>,
    aligned: bool,
}

impl NormalizedScores {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn aligned(&self) -> bool {
        self.aligned
    }
}

/// Indifference-zone classification thresholds: decisions are withheld on
/// `(lower, upper)`.
#[derive(Clone, Copy, Debug)]
pub struct ClassificationSpec {
    lower: f64,
    upper: f64,
}

impl ClassificationSpec {
    pub fn new(lower: f64, upper: f64) -> Result<Self, MetricsError> {
        if lower.partial_cmp(&upper) != Some(std::cmp::Ordering::Less) {
            return Err(MetricsError::InvalidThresholds { lower, upper });
        }
        Ok(ClassificationSpec { lower, upper })
    }

    /// Thresholds at the given quantiles of a reference sample.
    pub fn from_quantiles(
        reference: &[f64],
        q_lower: f64,
        q_upper: f64,
    ) -> Result<Self, MetricsError> {
        let mut sorted = reference.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
        ClassificationSpec::new(
            quantile_sorted(&sorted, q_lower),
            quantile_sorted(&sorted, q_upper),
        )
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }
}

fn column(m: &Array2<f64>, k: usize) -> Result<Vec<f64>, MetricsError> {
    if k >= m.ncols() {
        return Err(MetricsError::ColumnOutOfRange {
            index: k,
            n_cols: m.ncols(),
        });
    }
    Ok(m.column(k).to_vec())
}

/// Sine of the angle between column `k` of the true and estimated score
/// matrices. Sign-blind: flipping the estimate leaves it unchanged.
pub fn factor_sine_error(
    theta_true: &Array2<f64>,
    theta_hat: &Array2<f64>,
    k: usize,
) -> Result<f64, MetricsError> {
    if theta_true.dim() != theta_hat.dim() {
        return Err(MetricsError::ShapeMismatch(theta_true.dim(), theta_hat.dim()));
    }
    let a = column(theta_true, k)?;
    let b = column(theta_hat, k)?;
    Ok(sin_angle_vec(&a, &b)?)
}

/// The +/-1 factor resolving the sign indeterminacy of an estimated factor:
/// +1 when the dot product is positive, -1 when negative. An exactly zero
/// dot product ties to +1.
pub fn sign_align(w: &[f64], w_hat: &[f64]) -> Result<f64, MetricsError> {
    if w.len() != w_hat.len() {
        return Err(MetricsError::LengthMismatch(w.len(), w_hat.len()));
    }
    let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    if norm_sq(w) == 0.0 {
        return Err(MetricsError::ZeroColumn(0));
    }
    if norm_sq(w_hat) == 0.0 {
        return Err(MetricsError::ZeroColumn(1));
    }
    let dot: f64 = w.iter().zip(w_hat).map(|(a, b)| a * b).sum();
    Ok(if dot < 0.0 { -1.0 } else { 1.0 })
}

/// Normalizes a score column to `v_i = c * sqrt(N) * x_i / |x|`, so the
/// squared norm of the result is N. Scale-invariant in the input.
pub fn normalize_scores(column: &[f64], sign: f64) -> Result<NormalizedScores, MetricsError> {
    let norm = column.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(MetricsError::ZeroColumn(0));
    }
    let scale = sign * (column.len() as f64).sqrt() / norm;
    Ok(NormalizedScores {
        values: column.iter().map(|x| x * scale).collect(),
        aligned: sign != 0.0,
    })
}

/// Exact 1-Wasserstein distance between the empirical measures of two
/// equal-size samples on the line: the mean absolute difference of sorted
/// order statistics.
pub fn wasserstein_empirical(v: &[f64], v_hat: &[f64]) -> Result<f64, MetricsError> {
    if v.len() != v_hat.len() {
        return Err(MetricsError::LengthMismatch(v.len(), v_hat.len()));
    }
    if v.is_empty() {
        return Ok(0.0);
    }
    let mut a = v.to_vec();
    let mut b = v_hat.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    b.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / v.len() as f64)
}

/// Number of discordant (unordered) pairs between two rankings: pairs where
/// one sample orders strictly one way and the other strictly the opposite
/// way. Ties in either sample never count. Runs in O(N log N) by inversion
/// counting.
pub fn kendall_tau_distance(v: &[f64], v_hat: &[f64]) -> Result<u64, MetricsError> {
    if v.len() != v_hat.len() {
        return Err(MetricsError::LengthMismatch(v.len(), v_hat.len()));
    }
    let n = v.len();
    if n < 2 {
        return Ok(0);
    }
    // Sort by (v, v_hat) ascending; discordant pairs are then exactly the
    // strict inversions of the v_hat sequence. Tie-breaking by v_hat keeps
    // v-tied pairs in non-inverted order, and v_hat ties are never strict
    // inversions, so both kinds of ties contribute zero.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        v[i].partial_cmp(&v[j])
            .expect("finite values")
            .then(v_hat[i].partial_cmp(&v_hat[j]).expect("finite values"))
    });
    let mut seq: Vec<f64> = order.iter().map(|&i| v_hat[i]).collect();
    let mut buf = vec![0.0; n];
    Ok(count_inversions(&mut seq, &mut buf))
}

fn count_inversions(seq: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = seq.split_at_mut(mid);
    let mut count = count_inversions(left, buf) + count_inversions(right, buf);
    // Merge, counting strict left > right crossings.
    let (mut i, mut j, mut out) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[out] = left[i];
            i += 1;
        } else {
            buf[out] = right[j];
            count += (left.len() - i) as u64;
            j += 1;
        }
        out += 1;
    }
    while i < left.len() {
        buf[out] = left[i];
        i += 1;
        out += 1;
    }
    while j < right.len() {
        buf[out] = right[j];
        j += 1;
        out += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    count
}

/// Kendall-tau distance normalized by the number of unordered pairs, in
/// `[0, 1]`.
pub fn normalized_kendall_error(v: &[f64], v_hat: &[f64]) -> Result<f64, MetricsError> {
    let n = v.len();
    if n < 2 {
        return Ok(0.0);
    }
    let count = kendall_tau_distance(v, v_hat)?;
    Ok(count as f64 / (n as f64 * (n as f64 - 1.0) / 2.0))
}

/// Fraction of subjects classified on the wrong side of the indifference
/// zone: estimated at or above the upper threshold while truly at or below
/// the lower one, or vice versa.
pub fn classification_error(
    v: &[f64],
    v_hat: &[f64],
    spec: ClassificationSpec,
) -> Result<f64, MetricsError> {
    if v.len() != v_hat.len() {
        return Err(MetricsError::LengthMismatch(v.len(), v_hat.len()));
    }
    if v.is_empty() {
        return Ok(0.0);
    }
    let mistakes = v
        .iter()
        .zip(v_hat)
        .filter(|&(&t, &e)| {
            (e >= spec.upper && t <= spec.lower) || (e <= spec.lower && t >= spec.upper)
        })
        .count();
    Ok(mistakes as f64 / v.len() as f64)
}

/// Frobenius distance scaled by `sqrt(N * J)`.
pub fn scaled_frobenius_distance(
    m_hat: &Array2<f64>,
    m_true: &Array2<f64>,
) -> Result<f64, MetricsError> {
    if m_hat.dim() != m_true.dim() {
        return Err(MetricsError::ShapeMismatch(m_hat.dim(), m_true.dim()));
    }
    let sum_sq: f64 = m_hat
        .iter()
        .zip(m_true.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum_sq / m_hat.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sine_error_basic() {
        let t = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        assert_abs_diff_eq!(factor_sine_error(&t, &t, 0).unwrap(), 0.0);
        let mut flipped = t.clone();
        flipped.column_mut(0).mapv_inplace(|x| -x);
        assert_abs_diff_eq!(factor_sine_error(&t, &flipped, 0).unwrap(), 0.0);
        let hat = array![[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        assert_abs_diff_eq!(
            factor_sine_error(&t, &hat, 0).unwrap(),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sign_alignment_cases() {
        let w = [1.0, -2.0, 3.0];
        assert_eq!(sign_align(&w, &w).unwrap(), 1.0);
        let neg: Vec<f64> = w.iter().map(|x| -x).collect();
        assert_eq!(sign_align(&w, &neg).unwrap(), -1.0);
        assert_eq!(sign_align(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(sign_align(&[0.0, 0.0], &w[..2]).is_err());
    }

    #[test]
    fn normalization_properties() {
        let v = normalize_scores(&[1.0, 1.0, 1.0], 1.0).unwrap();
        for x in v.values() {
            assert_abs_diff_eq!(*x, 1.0, epsilon = 1e-15);
        }
        let v = normalize_scores(&[5.0, -5.0], 1.0).unwrap();
        assert_abs_diff_eq!(v.values()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v.values()[1], -1.0, epsilon = 1e-15);
        // Scale invariance and the squared-norm-N invariant.
        let base = [0.3, -1.2, 0.7, 2.0];
        let scaled: Vec<f64> = base.iter().map(|x| x * 17.0).collect();
        let a = normalize_scores(&base, 1.0).unwrap();
        let b = normalize_scores(&scaled, 1.0).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let norm_sq: f64 = a.values().iter().map(|x| x * x).sum();
        assert_abs_diff_eq!(norm_sq, base.len() as f64, epsilon = 1e-10);
    }

    #[test]
    fn wasserstein_basic() {
        assert_eq!(wasserstein_empirical(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            wasserstein_empirical(&[0.0, 0.0], &[1.0, 1.0]).unwrap(),
            1.0
        );
        // Same multiset in different order: identical empirical measures.
        assert_eq!(wasserstein_empirical(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 0.0);
    }

    /// Brute-force optimal matching over all permutations.
    fn wasserstein_matching_oracle(v: &[f64], w: &[f64]) -> f64 {
        fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k == items.len() {
                out.push(items.clone());
                return;
            }
            for i in k..items.len() {
                items.swap(k, i);
                permutations(items, k + 1, out);
                items.swap(k, i);
            }
        }
        let mut idx: Vec<usize> = (0..v.len()).collect();
        let mut all = Vec::new();
        permutations(&mut idx, 0, &mut all);
        all.iter()
            .map(|perm| {
                perm.iter()
                    .enumerate()
                    .map(|(i, &j)| (v[i] - w[j]).abs())
                    .sum::<f64>()
                    / v.len() as f64
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn wasserstein_matches_matching_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let n = rng.random_range(1..=6);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let fast = wasserstein_empirical(&v, &w).unwrap();
            let oracle = wasserstein_matching_oracle(&v, &w);
            assert_abs_diff_eq!(fast, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn wasserstein_is_a_metric_on_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..100 {
            let n = rng.random_range(2..12);
            let gen = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
            };
            let (a, b, c) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
            let dab = wasserstein_empirical(&a, &b).unwrap();
            let dba = wasserstein_empirical(&b, &a).unwrap();
            let dac = wasserstein_empirical(&a, &c).unwrap();
            let dcb = wasserstein_empirical(&c, &b).unwrap();
            assert_abs_diff_eq!(dab, dba, epsilon = 1e-12);
            assert!(dab <= dac + dcb + 1e-12);
            assert_eq!(wasserstein_empirical(&a, &a).unwrap(), 0.0);
        }
    }

    fn kendall_oracle(v: &[f64], w: &[f64]) -> u64 {
        let mut count = 0u64;
        for i in 0..v.len() {
            for j in (i + 1)..v.len() {
                let dv = v[i] - v[j];
                let dw = w[i] - w[j];
                if (dv > 0.0 && dw < 0.0) || (dv < 0.0 && dw > 0.0) {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn kendall_basic() {
        assert_eq!(kendall_tau_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0);
        assert_eq!(
            kendall_tau_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(),
            3
        );
        // Ties contribute nothing.
        assert_eq!(
            kendall_tau_distance(&[1.0, 1.0, 2.0], &[2.0, 1.0, 0.0]).unwrap(),
            2
        );
    }

    #[test]
    fn kendall_matches_quadratic_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..100 {
            let n = rng.random_range(2..=200);
            // Some duplicate values to exercise tie handling.
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5..5) as f64).collect();
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    if rng.random_range(0.0..1.0) < 0.7 {
                        v[i] + rng.random_range(-2.0..2.0)
                    } else {
                        rng.random_range(-5..5) as f64
                    }
                })
                .collect();
            assert_eq!(kendall_tau_distance(&v, &w).unwrap(), kendall_oracle(&v, &w));
        }
    }

    #[test]
    fn normalized_kendall_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..50 {
            let n = rng.random_range(2..100);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let e = normalized_kendall_error(&v, &w).unwrap();
            assert!((0.0..=1.0).contains(&e));
        }
        let v = [1.0, 2.0, 3.0];
        let rev = [3.0, 2.0, 1.0];
        assert_abs_diff_eq!(normalized_kendall_error(&v, &rev).unwrap(), 1.0);
    }

    #[test]
    fn classification_basic() {
        let spec = ClassificationSpec::new(0.14, 0.43).unwrap();
        let v = [0.0, 0.5, 0.2];
        assert_eq!(classification_error(&v, &v, spec).unwrap(), 0.0);
        // One subject truly below the zone, estimated above it.
        assert_abs_diff_eq!(
            classification_error(&[-0.86], &[1.43], spec).unwrap(),
            1.0
        );
        // Inside the zone: never counted, whatever the estimate does.
        assert_eq!(
            classification_error(&[0.2, 0.3], &[100.0, -100.0], spec).unwrap(),
            0.0
        );
    }

    #[test]
    fn classification_rejects_bad_thresholds() {
        assert!(ClassificationSpec::new(0.5, 0.5).is_err());
        assert!(ClassificationSpec::new(0.6, 0.4).is_err());
    }

    #[test]
    fn classification_monotone_in_zone_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let n = 300;
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let vh: Vec<f64> = v.iter().map(|x| x + rng.random_range(-0.6..0.6)).collect();
        let mut prev = f64::INFINITY;
        for widen in 0..5 {
            let half = 0.05 + 0.1 * widen as f64;
            let spec = ClassificationSpec::new(-half, half).unwrap();
            let e = classification_error(&v, &vh, spec).unwrap();
            assert!(e <= prev + 1e-12, "widening the zone raised the error");
            prev = e;
        }
    }

    #[test]
    fn frobenius_scaled_cases() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(scaled_frobenius_distance(&a, &a).unwrap(), 0.0);
        let ones = Array2::from_elem((2, 2), 1.0);
        let b = &a + &ones;
        assert_abs_diff_eq!(scaled_frobenius_distance(&b, &a).unwrap(), 1.0);
        // Homogeneity in a common scale factor.
        let la = a.mapv(|x| 3.0 * x);
        let lb = b.mapv(|x| 3.0 * x);
        assert_abs_diff_eq!(
            scaled_frobenius_distance(&lb, &la).unwrap(),
            3.0 * scaled_frobenius_distance(&b, &a).unwrap(),
            epsilon = 1e-12
        );
    }

    /// Bridge between the sine error and normalized-score distance: after
    /// sign alignment, `|v/sqrt(N) - vhat/sqrt(N)|^2 = 2 - 2 sqrt(1 - sin^2)`.
    #[test]
    fn sine_and_normalized_distance_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for _ in 0..200 {
            let n = rng.random_range(2..40);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let wh: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            if w.iter().all(|&x| x == 0.0) || wh.iter().all(|&x| x == 0.0) {
                continue;
            }
            let c = sign_align(&w, &wh).unwrap();
            let v = normalize_scores(&w, 1.0).unwrap();
            let vh = normalize_scores(&wh, c).unwrap();
            let dist2: f64 = v
                .values()
                .iter()
                .zip(vh.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64;
            let s = sin_angle_vec(&w, &wh).unwrap();
            let expected = 2.0 - 2.0 * (1.0 - s * s).max(0.0).sqrt();
            assert_abs_diff_eq!(dist2, expected, epsilon = 1e-10);
        }
    }
}
