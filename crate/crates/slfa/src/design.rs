//! Design-matrix analysis: item-type partition, empirical type proportions,
//! structural-identifiability verdicts (plain and intercept variants),
//! feasible collections of item types, and the signal-strength index.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest supported factor count for exact feasible-collection enumeration.
pub const MAX_FACTORS: usize = 20;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("design entry at row {row}, column {col} is {value}, expected 0 or 1")]
    NonBinaryEntry { row: usize, col: usize, value: f64 },
    #[error("design matrix must have at least one item row")]
    EmptyDesign,
    #[error("factor index {factor} out of range for {n_factors} factors")]
    FactorOutOfRange { factor: usize, n_factors: usize },
    #[error("{n_factors} factors exceeds the enumeration capacity of {MAX_FACTORS}")]
    CapacityExceeded { n_factors: usize },
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },
}

/// A subset of factor indices, stored as a bitmask over `0..K`.
///
/// Factor indices are zero-based in code; human-facing output is one-based.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FactorSet(u32);

impl FactorSet {
    pub const EMPTY: FactorSet = FactorSet(0);

    pub fn singleton(factor: usize) -> Self {
        FactorSet(1 << factor)
    }

    pub fn from_factors<I: IntoIterator<Item = usize>>(factors: I) -> Self {
        let mut mask = 0u32;
        for f in factors {
            mask |= 1 << f;
        }
        FactorSet(mask)
    }

    /// Every factor in `0..n_factors`.
    pub fn full(n_factors: usize) -> Self {
        FactorSet(if n_factors >= 32 {
            u32::MAX
        } else {
            (1u32 << n_factors) - 1
        })
    }

    pub fn contains(&self, factor: usize) -> bool {
        factor < 32 && self.0 & (1 << factor) != 0
    }

    pub fn insert(&mut self, factor: usize) {
        self.0 |= 1 << factor;
    }

    pub fn intersect(self, other: FactorSet) -> FactorSet {
        FactorSet(self.0 & other.0)
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    /// Zero-based factor indices in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..32).filter(move |k| self.contains(*k))
    }

    /// One-based factor labels, for reports and error messages.
    pub fn labels(&self) -> Vec<usize> {
        self.iter().map(|k| k + 1).collect()
    }
}

impl fmt::Debug for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, k) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", k + 1)?;
        }
        write!(f, "}}")
    }
}

/// A J×K binary design matrix: entry (j, k) is 1 when item j loads on
/// factor k, and the corresponding loading is constrained to zero otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    entries: Array2<u8>,
}

impl DesignMatrix {
    /// Validates that every entry is 0 or 1. All-zero rows are permitted but
    /// logged, since items loading on no factor carry no information.
    pub fn new(entries: Array2<u8>) -> Result<Self, DesignError> {
        if entries.nrows() == 0 {
            return Err(DesignError::EmptyDesign);
        }
        for ((row, col), &v) in entries.indexed_iter() {
            if v > 1 {
                return Err(DesignError::NonBinaryEntry {
                    row,
                    col,
                    value: v as f64,
                });
            }
        }
        let q = DesignMatrix { entries };
        let empty_rows = (0..q.n_items()).filter(|&j| q.row_set(j).is_empty()).count();
        if empty_rows > 0 {
            log::warn!("design matrix has {empty_rows} item(s) loading on no factor");
        }
        Ok(q)
    }

    /// Builds a design from per-item factor sets.
    pub fn from_row_sets(rows: &[FactorSet], n_factors: usize) -> Result<Self, DesignError> {
        let mut entries = Array2::<u8>::zeros((rows.len(), n_factors));
        for (j, set) in rows.iter().enumerate() {
            for k in set.iter() {
                if k >= n_factors {
                    return Err(DesignError::FactorOutOfRange {
                        factor: k,
                        n_factors,
                    });
                }
                entries[[j, k]] = 1;
            }
        }
        DesignMatrix::new(entries)
    }

    pub fn n_items(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.entries.ncols()
    }

    pub fn loads(&self, item: usize, factor: usize) -> bool {
        self.entries[[item, factor]] == 1
    }

    /// The factor set of item `j`.
    pub fn row_set(&self, item: usize) -> FactorSet {
        FactorSet::from_factors((0..self.n_factors()).filter(|&k| self.loads(item, k)))
    }

    pub fn entries(&self) -> &Array2<u8> {
        &self.entries
    }
}

/// The partition of items by their factor set, with empirical proportions.
#[derive(Clone, Debug)]
pub struct TypePartition {
    n_items: usize,
    n_factors: usize,
    groups: BTreeMap<FactorSet, Vec<usize>>,
}

impl TypePartition {
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_factors(&self) -> usize {
        self.n_factors
    }

    /// Item indices of type `set`, empty when the type does not occur.
    pub fn items_of(&self, set: FactorSet) -> &[usize] {
        self.groups.get(&set).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Empirical proportion of items of type `set`.
    pub fn proportion(&self, set: FactorSet) -> f64 {
        self.items_of(set).len() as f64 / self.n_items as f64
    }

    /// Types present in the design, in deterministic (mask) order.
    pub fn types(&self) -> impl Iterator<Item = (FactorSet, &[usize])> + '_ {
        self.groups.iter().map(|(s, v)| (*s, v.as_slice()))
    }

    /// Types whose empirical proportion strictly exceeds `threshold`.
    ///
    /// The identifiability condition is stated on limiting proportions; the
    /// threshold lets callers treat rare types as asymptotically negligible.
    /// The default everywhere is an exact `0.0`.
    pub fn active_types(&self, threshold: f64) -> Vec<FactorSet> {
        self.groups
            .iter()
            .filter(|(_, items)| !items.is_empty())
            .filter(|(s, items)| {
                !s.is_empty() && items.len() as f64 / self.n_items as f64 > threshold
            })
            .map(|(s, _)| *s)
            .collect()
    }

    /// Number of items loading on no factor.
    pub fn empty_type_items(&self) -> usize {
        self.items_of(FactorSet::EMPTY).len()
    }
}

/// Partitions items by factor set: item j belongs to the group of
/// `S = {k : q_jk = 1}`.
pub fn type_partition(q: &DesignMatrix) -> TypePartition {
    let mut groups: BTreeMap<FactorSet, Vec<usize>> = BTreeMap::new();
    for j in 0..q.n_items() {
        groups.entry(q.row_set(j)).or_default().push(j);
    }
    TypePartition {
        n_items: q.n_items(),
        n_factors: q.n_factors(),
        groups,
    }
}

/// Verdict for a single factor: the witness is the intersection of all active
/// item types containing the factor (empty when no active type contains it).
#[derive(Clone, Debug, PartialEq)]
pub struct FactorVerdict {
    pub factor: usize,
    pub identifiable: bool,
    pub witness: FactorSet,
}

/// Decides structural identifiability of factor `k` from the type partition.
///
/// Plain mode: factor k is identifiable iff the intersection of all active
/// types containing k is exactly `{k}`. Intercept mode: the intercept column
/// is present in every item, so the criterion becomes intersection equal to
/// `{1, k}` instead.
pub fn check_identifiability(
    partition: &TypePartition,
    factor: usize,
    intercept_mode: bool,
    proportion_threshold: f64,
) -> Result<FactorVerdict, DesignError> {
    if factor >= partition.n_factors() {
        return Err(DesignError::FactorOutOfRange {
            factor,
            n_factors: partition.n_factors(),
        });
    }
    let mut witness: Option<FactorSet> = None;
    for set in partition.active_types(proportion_threshold) {
        if set.contains(factor) {
            witness = Some(match witness {
                Some(w) => w.intersect(set),
                None => set,
            });
        }
    }
    // Convention: an empty family of sets intersects to the empty set, which
    // never certifies the factor.
    let witness = witness.unwrap_or(FactorSet::EMPTY);
    let target = if intercept_mode {
        FactorSet::from_factors([0, factor])
    } else {
        FactorSet::singleton(factor)
    };
    Ok(FactorVerdict {
        factor,
        identifiable: witness == target,
        witness,
    })
}

/// Enumerates the minimal feasible collections for `factor`: families of
/// active item types whose intersection is exactly `{factor}`, such that
/// removing any member breaks that property.
///
/// Every feasible collection contains a minimal one, and enlarging a
/// collection can only lower the minimum in the signal index, so minimal
/// collections suffice for the downstream maximization.
pub fn feasible_collections(
    active_types: &[FactorSet],
    factor: usize,
    n_factors: usize,
) -> Result<Vec<Vec<FactorSet>>, DesignError> {
    if n_factors > MAX_FACTORS {
        return Err(DesignError::CapacityExceeded { n_factors });
    }
    if factor >= n_factors {
        return Err(DesignError::FactorOutOfRange { factor, n_factors });
    }
    let target = FactorSet::singleton(factor);
    let mut candidates: Vec<FactorSet> = active_types
        .iter()
        .copied()
        .filter(|s| s.contains(factor))
        .collect();
    candidates.sort();
    candidates.dedup();

    let mut found: Vec<Vec<usize>> = Vec::new();
    // Breadth-first growth over candidate indices; adding a type must strictly
    // shrink the running intersection, which bounds the depth by n_factors.
    let mut frontier: Vec<(FactorSet, Vec<usize>)> = Vec::new();
    for (i, &s) in candidates.iter().enumerate() {
        if s == target {
            found.push(vec![i]);
        } else {
            frontier.push((s, vec![i]));
        }
    }
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (mask, combo) in &frontier {
            let last = *combo.last().expect("non-empty combo");
            for (i, &s) in candidates.iter().enumerate().skip(last + 1) {
                let shrunk = mask.intersect(s);
                if shrunk == *mask {
                    continue;
                }
                let mut grown = combo.clone();
                grown.push(i);
                if shrunk == target {
                    found.push(grown);
                } else {
                    next.push((shrunk, grown));
                }
            }
        }
        frontier = next;
    }

    // Strict shrinking makes every *suffix* necessary but an early member can
    // still be redundant; filter to genuinely minimal collections.
    let mut minimal: Vec<Vec<FactorSet>> = Vec::new();
    for combo in found {
        let is_minimal = combo.iter().all(|&dropped| {
            let inter = combo
                .iter()
                .filter(|&&i| i != dropped)
                .map(|&i| candidates[i])
                .fold(FactorSet::full(n_factors), FactorSet::intersect);
            combo.len() == 1 || inter != target
        });
        if is_minimal {
            minimal.push(combo.into_iter().map(|i| candidates[i]).collect());
        }
    }
    minimal.sort();
    minimal.dedup();
    Ok(minimal)
}

fn singular_values_desc(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    sv
}

/// Smallest singular value of a block with the full column count, or 0 when
/// the block has fewer rows than columns (and therefore deficient rank).
fn min_singular_full_cols(m: &DMatrix<f64>) -> f64 {
    if m.nrows() < m.ncols() || m.ncols() == 0 {
        return 0.0;
    }
    let sv = singular_values_desc(m);
    sv[m.ncols() - 1]
}

/// Smallest singular value scaled by the square root of the row count:
/// `sigma_min(W) / sqrt(m)` for an m×n matrix, a non-degeneracy measure of a
/// tall matrix. Returns 0 for rank-deficient (or wide) inputs.
pub fn scaled_min_singular(w: &Array2<f64>) -> f64 {
    let m = w.nrows();
    if m == 0 {
        return 0.0;
    }
    let dm = DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[[i, j]]);
    min_singular_full_cols(&dm) / (m as f64).sqrt()
}

/// Signal-strength index for `factor`: the minimum of
///
/// * the best certifying collection's worst block signal,
///   `max_collections min_{S} sigma_{|S|}(A[R(S), S]) / sqrt(J)`, and
/// * the score-matrix conditioning term `sigma_K(Theta) / sqrt(N)`.
///
/// Returns 0 when no feasible collection exists, or when every collection
/// requires a block that is empty or has deficient rank.
pub fn signal_index(
    theta: &Array2<f64>,
    loadings: &Array2<f64>,
    q: &DesignMatrix,
    factor: usize,
) -> Result<f64, DesignError> {
    if loadings.nrows() != q.n_items() || loadings.ncols() != q.n_factors() {
        return Err(DesignError::ShapeMismatch {
            context: format!(
                "loadings are {}x{} but design is {}x{}",
                loadings.nrows(),
                loadings.ncols(),
                q.n_items(),
                q.n_factors()
            ),
        });
    }
    if theta.ncols() != q.n_factors() {
        return Err(DesignError::ShapeMismatch {
            context: format!(
                "scores have {} columns but design has {} factors",
                theta.ncols(),
                q.n_factors()
            ),
        });
    }
    let partition = type_partition(q);
    let active = partition.active_types(0.0);
    let collections = feasible_collections(&active, factor, q.n_factors())?;
    if collections.is_empty() {
        return Ok(0.0);
    }
    let j_scale = (q.n_items() as f64).sqrt();
    let mut best = 0.0f64;
    for collection in &collections {
        let mut worst = f64::INFINITY;
        for &set in collection {
            let rows = partition.items_of(set);
            let cols: Vec<usize> = set.iter().collect();
            let block = DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                loadings[[rows[r], cols[c]]]
            });
            worst = worst.min(min_singular_full_cols(&block) / j_scale);
        }
        best = best.max(worst);
    }
    let theta_term = scaled_min_singular(theta);
    Ok(best.min(theta_term))
}

/// Verdict and witness for one factor, with one-based labels for output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FactorReport {
    pub factor: usize,
    pub identifiable: bool,
    pub witness: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_index: Option<f64>,
}

/// Count and proportion of one item type.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TypeProportion {
    pub factors: Vec<usize>,
    pub items: usize,
    pub proportion: f64,
}

/// Full identifiability report for a design, serializable to JSON.
///
/// Factor labels are one-based. In intercept mode the first column is the
/// pinned intercept rather than a latent factor, so `all_identifiable`
/// summarizes factors 2..K there; the per-factor list always covers all K.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub n_items: usize,
    pub n_factors: usize,
    pub intercept_mode: bool,
    pub proportion_threshold: f64,
    pub unassigned_items: usize,
    pub types: Vec<TypeProportion>,
    pub factors: Vec<FactorReport>,
    pub all_identifiable: bool,
}

impl IdentifiabilityReport {
    pub fn from_design(
        q: &DesignMatrix,
        intercept_mode: bool,
        proportion_threshold: f64,
    ) -> Result<Self, DesignError> {
        let partition = type_partition(q);
        let types = partition
            .types()
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, items)| TypeProportion {
                factors: s.labels(),
                items: items.len(),
                proportion: items.len() as f64 / q.n_items() as f64,
            })
            .collect();
        let mut factors = Vec::with_capacity(q.n_factors());
        for k in 0..q.n_factors() {
            let v = check_identifiability(&partition, k, intercept_mode, proportion_threshold)?;
            factors.push(FactorReport {
                factor: k + 1,
                identifiable: v.identifiable,
                witness: v.witness.labels(),
                signal_index: None,
            });
        }
        let first_latent = if intercept_mode { 1 } else { 0 };
        let all_identifiable = factors[first_latent..].iter().all(|f| f.identifiable);
        Ok(IdentifiabilityReport {
            n_items: q.n_items(),
            n_factors: q.n_factors(),
            intercept_mode,
            proportion_threshold,
            unassigned_items: partition.empty_type_items(),
            types,
            factors,
            all_identifiable,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn design(rows: &[&[usize]], k: usize) -> DesignMatrix {
        let sets: Vec<FactorSet> = rows
            .iter()
            .map(|r| FactorSet::from_factors(r.iter().map(|f| f - 1)))
            .collect();
        DesignMatrix::from_row_sets(&sets, k).expect("valid design")
    }

    /// Three items cycling through the pairs {1,2}, {1,3}, {2,3}.
    fn overlapping_pairs() -> DesignMatrix {
        design(&[&[1, 2], &[1, 3], &[2, 3]], 3)
    }

    #[test]
    fn partition_assigns_pair_types() {
        let p = type_partition(&overlapping_pairs());
        assert_eq!(p.items_of(FactorSet::from_factors([0, 1])), &[0]);
        assert_eq!(p.items_of(FactorSet::from_factors([0, 2])), &[1]);
        assert_eq!(p.items_of(FactorSet::from_factors([1, 2])), &[2]);
    }

    #[test]
    fn partition_simple_structure_proportions() {
        let q = design(&[&[1], &[2], &[3], &[4], &[5]], 5);
        let p = type_partition(&q);
        for k in 0..5 {
            assert_abs_diff_eq!(p.proportion(FactorSet::singleton(k)), 0.2);
        }
    }

    #[test]
    fn partition_counts_cover_all_items() {
        let q = design(&[&[1], &[1, 2], &[2], &[1], &[1, 2]], 2);
        let p = type_partition(&q);
        let total: usize = p.types().map(|(_, items)| items.len()).sum();
        assert_eq!(total, q.n_items());
    }

    #[test]
    fn all_zero_row_is_assigned_to_empty_type() {
        let q = DesignMatrix::new(array![[1, 0], [0, 0]]).unwrap();
        let p = type_partition(&q);
        assert_eq!(p.empty_type_items(), 1);
        assert_eq!(p.items_of(FactorSet::EMPTY), &[1]);
    }

    #[test]
    fn non_binary_entry_rejected() {
        let err = DesignMatrix::new(array![[1, 2]]).unwrap_err();
        match err {
            DesignError::NonBinaryEntry { row: 0, col: 1, value } => {
                assert_eq!(value, 2.0);
            }
            other => panic!("unexpected error: {other:?}"),
        }
    }

    #[test]
    fn overlapping_pairs_identify_all_factors() {
        let p = type_partition(&overlapping_pairs());
        for k in 0..3 {
            let v = check_identifiability(&p, k, false, 0.0).unwrap();
            assert!(v.identifiable, "factor {k} should be identifiable");
            assert_eq!(v.witness, FactorSet::singleton(k));
        }
    }

    #[test]
    fn nested_types_leave_second_factor_unidentifiable() {
        // Half the items load on factor 1 alone, half on both factors.
        let q = design(&[&[1], &[1, 2], &[1], &[1, 2]], 2);
        let p = type_partition(&q);
        let v1 = check_identifiability(&p, 0, false, 0.0).unwrap();
        assert!(v1.identifiable);
        assert_eq!(v1.witness, FactorSet::singleton(0));
        let v2 = check_identifiability(&p, 1, false, 0.0).unwrap();
        assert!(!v2.identifiable);
        assert_eq!(v2.witness, FactorSet::from_factors([0, 1]));
    }

    #[test]
    fn unmeasured_factor_gets_empty_witness() {
        let q = design(&[&[1], &[1]], 2);
        let p = type_partition(&q);
        let v = check_identifiability(&p, 1, false, 0.0).unwrap();
        assert!(!v.identifiable);
        assert_eq!(v.witness, FactorSet::EMPTY);
    }

    #[test]
    fn intercept_mode_targets_pair_with_first_factor() {
        let q = design(&[&[1, 2], &[1, 2]], 2);
        let p = type_partition(&q);
        let v = check_identifiability(&p, 1, true, 0.0).unwrap();
        assert!(v.identifiable);
        assert_eq!(v.witness, FactorSet::from_factors([0, 1]));
    }

    #[test]
    fn verdicts_invariant_to_row_permutation() {
        let q = design(&[&[1], &[1, 2], &[2, 3], &[1, 3], &[2]], 3);
        let permuted = design(&[&[2], &[1, 3], &[1], &[2, 3], &[1, 2]], 3);
        let p = type_partition(&q);
        let pp = type_partition(&permuted);
        for k in 0..3 {
            let a = check_identifiability(&p, k, false, 0.0).unwrap();
            let b = check_identifiability(&pp, k, false, 0.0).unwrap();
            assert_eq!(a.identifiable, b.identifiable);
            assert_eq!(a.witness, b.witness);
        }
    }

    #[test]
    fn singleton_type_always_identifies_its_factor() {
        let q = design(&[&[1], &[1, 2], &[1, 2, 3], &[2, 3]], 3);
        let p = type_partition(&q);
        assert!(p.proportion(FactorSet::singleton(0)) > 0.0);
        let v = check_identifiability(&p, 0, false, 0.0).unwrap();
        assert!(v.identifiable);
    }

    #[test]
    fn feasible_singleton_collection() {
        let active = [FactorSet::singleton(0), FactorSet::from_factors([0, 1])];
        let found = feasible_collections(&active, 0, 2).unwrap();
        assert_eq!(found, vec![vec![FactorSet::singleton(0)]]);
    }

    #[test]
    fn feasible_pair_intersection() {
        let active = [
            FactorSet::from_factors([0, 1]),
            FactorSet::from_factors([0, 2]),
            FactorSet::from_factors([1, 2]),
        ];
        let found = feasible_collections(&active, 0, 3).unwrap();
        assert_eq!(
            found,
            vec![vec![
                FactorSet::from_factors([0, 1]),
                FactorSet::from_factors([0, 2]),
            ]]
        );
    }

    #[test]
    fn feasible_none_when_factor_tied() {
        let active = [FactorSet::from_factors([0, 1])];
        assert!(feasible_collections(&active, 1, 2).unwrap().is_empty());
    }

    #[test]
    fn capacity_error_beyond_factor_bound() {
        let err = feasible_collections(&[], 0, 21).unwrap_err();
        assert!(matches!(err, DesignError::CapacityExceeded { .. }));
    }

    /// For small K, every minimal collection found by the search must match a
    /// brute-force enumeration over all subsets of active types.
    #[test]
    fn feasible_collections_match_brute_force() {
        for k in 2..=4usize {
            // All non-empty subsets of factors as the active-type pool.
            let all_types: Vec<FactorSet> = (1u32..(1 << k)).map(FactorSet).collect();
            for factor in 0..k {
                let found = feasible_collections(&all_types, factor, k).unwrap();
                let brute = brute_force_minimal(&all_types, factor, k);
                assert_eq!(found, brute, "K={k}, factor={factor}");
            }
        }
    }

    fn brute_force_minimal(
        active: &[FactorSet],
        factor: usize,
        n_factors: usize,
    ) -> Vec<Vec<FactorSet>> {
        let candidates: Vec<FactorSet> = {
            let mut c: Vec<FactorSet> =
                active.iter().copied().filter(|s| s.contains(factor)).collect();
            c.sort();
            c.dedup();
            c
        };
        let target = FactorSet::singleton(factor);
        let n = candidates.len();
        let feasible: Vec<u64> = (1u64..(1 << n))
            .filter(|&mask| {
                let inter = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| candidates[i])
                    .fold(FactorSet::full(n_factors), FactorSet::intersect);
                inter == target
            })
            .collect();
        let mut minimal: Vec<Vec<FactorSet>> = feasible
            .iter()
            .filter(|&&mask| {
                !feasible
                    .iter()
                    .any(|&other| other != mask && other & mask == other)
            })
            .map(|&mask| {
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| candidates[i])
                    .collect()
            })
            .collect();
        minimal.sort();
        minimal
    }

    #[test]
    fn scaled_min_singular_orthogonal_frame() {
        // Columns orthogonal with squared norm m: sigma_n = sqrt(m).
        let m = 8;
        let mut w = Array2::<f64>::zeros((m, 2));
        for i in 0..m {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            w[[i, 0]] = 1.0;
            w[[i, 1]] = sign;
        }
        assert_abs_diff_eq!(scaled_min_singular(&w), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scaled_min_singular_rank_deficient_is_zero() {
        let w = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert_abs_diff_eq!(scaled_min_singular(&w), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn scaled_min_singular_diagonal() {
        let w = array![[2.0, 0.0], [0.0, 2.0]];
        assert_abs_diff_eq!(scaled_min_singular(&w), 2.0 / 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn signal_index_simple_structure_closed_form() {
        // Orthogonal scores with squared column norm N, all-ones loading
        // blocks of J/K rows: index is min(sqrt(1/K), 1).
        let k = 2;
        let n = 8;
        let j = 6;
        let mut theta = Array2::<f64>::zeros((n, k));
        for i in 0..n {
            theta[[i, 0]] = 1.0;
            theta[[i, 1]] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let q = design(&[&[1], &[2], &[1], &[2], &[1], &[2]], k);
        let mut a = Array2::<f64>::zeros((j, k));
        for row in 0..j {
            a[[row, row % k]] = 1.0;
        }
        let got = signal_index(&theta, &a, &q, 0).unwrap();
        assert_abs_diff_eq!(got, (1.0 / k as f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn signal_index_zero_without_feasible_collection() {
        // Factor 2 only ever appears with factor 1.
        let q = design(&[&[1], &[1, 2]], 2);
        let theta = array![[1.0, 0.5], [0.3, -1.0], [0.2, 0.8]];
        let a = array![[1.0, 0.0], [0.5, 0.5]];
        assert_eq!(signal_index(&theta, &a, &q, 1).unwrap(), 0.0);
    }

    #[test]
    fn signal_index_zero_for_collinear_scores() {
        let q = design(&[&[1], &[2]], 2);
        let theta = array![[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(signal_index(&theta, &a, &q, 0).unwrap(), 0.0);
    }

    #[test]
    fn signal_index_invariant_to_column_relabeling() {
        let q = design(&[&[1], &[2], &[1, 2], &[1], &[2]], 2);
        let theta = array![
            [1.0, 0.2],
            [-0.5, 1.1],
            [0.3, -0.7],
            [0.9, 0.4],
            [-1.2, 0.6],
            [0.1, -0.3]
        ];
        let a = array![
            [0.8, 0.0],
            [0.0, 1.1],
            [0.5, -0.4],
            [1.2, 0.0],
            [0.0, 0.7]
        ];
        // Swap the two factor columns everywhere and ask about the relabeled factor.
        let swap = |m: &Array2<f64>| {
            let mut out = Array2::zeros((m.nrows(), 2));
            out.column_mut(0).assign(&m.column(1));
            out.column_mut(1).assign(&m.column(0));
            out
        };
        let q_swapped = design(&[&[2], &[1], &[1, 2], &[2], &[1]], 2);
        let a_swapped = swap(&a);
        let theta_swapped = swap(&theta);
        let original = signal_index(&theta, &a, &q, 0).unwrap();
        let relabeled = signal_index(&theta_swapped, &a_swapped, &q_swapped, 1).unwrap();
        assert_abs_diff_eq!(original, relabeled, epsilon = 1e-12);
    }

    #[test]
    fn report_serializes_with_one_based_labels() {
        let report = IdentifiabilityReport::from_design(&overlapping_pairs(), false, 0.0).unwrap();
        assert!(report.all_identifiable);
        assert_eq!(report.factors.len(), 3);
        assert_eq!(report.factors[0].factor, 1);
        assert_eq!(report.factors[0].witness, vec![1]);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"all_identifiable\":true"));
    }
}
