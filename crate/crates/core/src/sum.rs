//! Fixed-order reductions. Results depend only on the input order, never on
//! thread count.

/// Inputs at or above this length are reduced pairwise.
pub const PAIRWISE_THRESHOLD: usize = 1024;
const BLOCK: usize = 32;

/// Sums `n` rows of width `w` stored row-major in `vals` into `out`.
/// Ascending left fold below [`PAIRWISE_THRESHOLD`] rows, cascade summation
/// (blocks of 32 folded left, combined pairwise) at or above it.
pub fn sum_rows(vals: &[f64], w: usize, n: usize, out: &mut [f64]) {
    debug_assert!(vals.len() >= n * w);
    debug_assert_eq!(out.len(), w);
    if n < PAIRWISE_THRESHOLD {
        fold_rows(vals, w, 0, n, out);
    } else {
        pairwise_rows(vals, w, 0, n, out);
    }
}

fn fold_rows(vals: &[f64], w: usize, lo: usize, hi: usize, out: &mut [f64]) {
    out.fill(0.0);
    if w == 1 {
        let mut s = 0.0;
        for v in &vals[lo..hi] {
            s += v;
        }
        out[0] = s;
        return;
    }
    for row in vals[lo * w..hi * w].chunks_exact(w) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn pairwise_rows(vals: &[f64], w: usize, lo: usize, hi: usize, out: &mut [f64]) {
    if hi - lo <= BLOCK {
        fold_rows(vals, w, lo, hi, out);
        return;
    }
    let mid = lo + (hi - lo) / 2;
    let mut right = vec![0.0; w];
    pairwise_rows(vals, w, lo, mid, out);
    pairwise_rows(vals, w, mid, hi, &mut right);
    for (o, r) in out.iter_mut().zip(right) {
        *o += r;
    }
}

/// Scalar convenience wrapper around [`sum_rows`].
pub fn sum(vals: &[f64]) -> f64 {
    let mut out = [0.0];
    sum_rows(vals, 1, vals.len(), &mut out);
    out[0]
}
