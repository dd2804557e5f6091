//! Small numeric utilities shared across the crate: deterministic pairwise
//! summation, order-statistic quantiles, and seed derivation for child RNGs.

/// Sequential base-case width for pairwise summation.
const PAIRWISE_BASE: usize = 64;

/// Pairwise (tree) summation of `f(0), f(1), ..., f(n-1)`.
///
/// The reduction tree depends only on `n`, so the result is a deterministic
/// function of the terms with rounding error growing like `O(log n)` instead
/// of `O(n)` for a running sum.
pub fn pairwise_sum_by<F>(n: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    sum_range(0, n, f)
}

fn sum_range<F>(start: usize, len: usize, f: &F) -> f64
where
    F: Fn(usize) -> f64,
{
    if len <= PAIRWISE_BASE {
        let mut acc = 0.0;
        for i in start..start + len {
            acc += f(i);
        }
        acc
    } else {
        let half = len / 2;
        sum_range(start, half, f) + sum_range(start + half, len - half, f)
    }
}

/// Pairwise summation of a slice.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), &|i| values[i])
}

/// Euclidean norm of a slice.
pub fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Quantile of a sorted sample by linear interpolation between order
/// statistics (the convention used by numpy's default and R type 7).
///
/// `q` is clamped to `[0, 1]`. Panics on an empty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Median of an unsorted sample (copies and sorts).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in median"));
    quantile_sorted(&v, 0.5)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a root seed and a sequence of tags
/// (e.g. `[J, replication, purpose]`), so that independent units of work own
/// independent, schedule-invariant random streams.
pub fn child_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut state = seed;
    let mut out = splitmix64(&mut state);
    for &t in tags {
        state ^= t.wrapping_mul(0xff51_afd7_ed55_8ccd);
        out = splitmix64(&mut state);
    }
    out
}
