//! Empirical measures of particle configurations.

mod checkpoint;
mod density;
mod identity;

use rayon::prelude::*;

pub use density::{histogram_density, histogram_density_auto, DensityTable};
pub use identity::{identity_decomposition_check, identity_odd_kernel_check, DecompositionResidual, OddKernelIdentity};

use crate::error::{Error, Result};
use crate::model::Kernel;
use crate::sum::{sum, sum_rows};

/// `N` particles in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    n: usize,
    d: usize,
    data: Vec<f64>,
    pub time: f64,
    pub step: usize,
}

impl ParticleState {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::DimensionMismatch(format!("state needs N >= 1 and d >= 1, got N = {n}, d = {d}")));
        }
        if data.len() != n * d {
            return Err(Error::SizeMismatch { left: data.len(), right: n * d });
        }
        Ok(Self { n, d, data, time: 0.0, step: 0 })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self::new(n, d, vec![0.0; n * d]).expect("positive dimensions")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch("rows of unequal length".into()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    /// One-dimensional state from a list of scalars.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.len(), 1, xs.to_vec())
    }

    pub fn at(mut self, time: f64, step: usize) -> Self {
        self.time = time;
        self.step = step;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows().map(|r| r[k]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `max_i |x_i|`.
    pub fn max_norm(&self) -> f64 {
        self.rows().map(norm).fold(0.0, f64::max)
    }

    /// First `n` particles.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n {
            return Err(Error::InvalidArgument(format!("prefix of {n} particles from {}", self.n)));
        }
        Ok(Self { n, d: self.d, data: self.data[..n * self.d].to_vec(), time: self.time, step: self.step })
    }

    /// FNV-1a digest of the raw bits, used to tag run lineage.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in [self.n as u64, self.d as u64].into_iter().chain(self.data.iter().map(|v| v.to_bits())) {
            for b in w.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Moments of an empirical measure needed by measure-dependent coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    pub mean: Vec<f64>,
    /// `(1/N) sum |x_i|^2`
    pub second_moment: f64,
    /// `(1/N) sum |x_i - mean|^2`
    pub variance: f64,
}

impl MeasureSummary {
    pub fn of(state: &ParticleState) -> Self {
        let (n, d) = (state.n(), state.dim());
        let mut mean = vec![0.0; d];
        sum_rows(state.as_slice(), d, n, &mut mean);
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let sq: Vec<f64> = state.rows().map(|r| r.iter().map(|v| v * v).sum()).collect();
        let centred: Vec<f64> =
            state.rows().map(|r| r.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum()).collect();
        Self { mean, second_moment: sum(&sq) / n as f64, variance: sum(&centred) / n as f64 }
    }

    pub fn dirac(x: &[f64]) -> Self {
        Self { mean: x.to_vec(), second_moment: x.iter().map(|v| v * v).sum(), variance: 0.0 }
    }
}

/// Per-thread buffers for pair sums.
#[derive(Debug, Default, Clone)]
pub(crate) struct PairScratch {
    vals: Vec<f64>,
    jacs: Vec<f64>,
    z: Vec<f64>,
}

/// Transformation applied to each pair value before summation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum PairMap {
    Plain,
    /// `g -> g / (1 + scale |g|)`
    Tamed(f64),
}

/// `(1/N) sum_j kernel(y - x_j)` and, optionally, its `y`-Jacobian.
/// Summation runs over ascending `j` (pairwise for `N >= 1024`).
///
/// When the Jacobian is requested, also returns `(1/N) sum_j |kernel(y - x_j)|_1`,
/// the magnitude the round-off of the sum scales with; otherwise returns 0.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pair_sum(
    kernel: &Kernel,
    positions: &[f64],
    d: usize,
    y: &[f64],
    map: PairMap,
    out: &mut [f64],
    jac: Option<&mut [f64]>,
    scratch: &mut PairScratch,
) -> f64 {
    let n = positions.len() / d;
    let w = kernel.out_len();
    let want_jac = jac.is_some();
    scratch.vals.resize(n * w, 0.0);
    if want_jac {
        scratch.jacs.resize(n * d * d, 0.0);
    }
    scratch.z.resize(d, 0.0);

    match (kernel.as_power_law(), map) {
        (Some((c, k)), PairMap::Plain) if d == 1 && k == 3.0 => {
            let y0 = y[0];
            for (j, xj) in positions.iter().enumerate() {
                let z = y0 - xj;
                let z2 = z * z;
                scratch.vals[j] = c * z * z2;
                if want_jac {
                    scratch.jacs[j] = 3.0 * c * z2;
                }
            }
        }
        (Some((c, k)), PairMap::Plain) => {
            for (j, xj) in positions.chunks_exact(d).enumerate() {
                let mut r2 = 0.0;
                for q in 0..d {
                    let z = y[q] - xj[q];
                    scratch.z[q] = z;
                    r2 += z * z;
                }
                let (s, wgt) = power_law_factors(c, k, r2);
                for q in 0..d {
                    scratch.vals[j * w + q] = s * scratch.z[q];
                }
                if want_jac {
                    let jj = &mut scratch.jacs[j * d * d..(j + 1) * d * d];
                    for r in 0..d {
                        for q in 0..d {
                            jj[r * d + q] = wgt * scratch.z[r] * scratch.z[q];
                        }
                        jj[r * d + r] += s;
                    }
                }
            }
        }
        _ => {
            for (j, xj) in positions.chunks_exact(d).enumerate() {
                for q in 0..d {
                    scratch.z[q] = y[q] - xj[q];
                }
                let v = &mut scratch.vals[j * w..(j + 1) * w];
                kernel.eval(&scratch.z, v);
                if let PairMap::Tamed(scale) = map {
                    let mag = norm(v);
                    let f = 1.0 / (1.0 + scale * mag);
                    v.iter_mut().for_each(|x| *x *= f);
                }
                if want_jac {
                    kernel.jacobian(&scratch.z, &mut scratch.jacs[j * d * d..(j + 1) * d * d]);
                }
            }
        }
    }

    sum_rows(&scratch.vals, w, n, out);
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    match jac {
        Some(jac) => {
            sum_rows(&scratch.jacs, d * d, n, jac);
            jac.iter_mut().for_each(|v| *v *= inv);
            scratch.vals[..n * w].iter().map(|v| v.abs()).sum::<f64>() * inv
        }
        None => 0.0,
    }
}

#[inline]
fn power_law_factors(c: f64, k: f64, r2: f64) -> (f64, f64) {
    if k == 3.0 {
        (c * r2, 2.0 * c)
    } else if r2 == 0.0 {
        (if k == 1.0 { c } else { 0.0 }, 0.0)
    } else {
        let p = r2.powf(0.5 * (k - 1.0));
        (c * p, c * (k - 1.0) * p / r2)
    }
}

/// `(kernel * mu)(y)` for the empirical measure of `state`, written to `out`.
pub fn convolve_at(kernel: &Kernel, state: &ParticleState, y: &[f64], out: &mut [f64]) -> Result<()> {
    if y.len() != state.dim() || kernel.dim() != state.dim() {
        return Err(Error::DimensionMismatch(format!(
            "kernel d = {}, point d = {}, state d = {}",
            kernel.dim(),
            y.len(),
            state.dim()
        )));
    }
    let mut scratch = PairScratch::default();
    let _ = pair_sum(kernel, state.as_slice(), state.dim(), y, PairMap::Plain, out, None, &mut scratch);
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("convolution".into()))
    }
}

/// `(1/N) sum_j kernel(x_i - x_j)` for one particle `i` (zero-based).
pub fn convolve(kernel: &Kernel, state: &ParticleState, i: usize) -> Result<Vec<f64>> {
    if i >= state.n() {
        return Err(Error::InvalidArgument(format!("particle index {i} out of range 0..{}", state.n())));
    }
    let mut out = vec![0.0; kernel.out_len()];
    convolve_at(kernel, state, state.row(i), &mut out)?;
    Ok(out)
}

pub(crate) fn convolve_all_mapped(kernel: &Kernel, state: &ParticleState, map: PairMap) -> Result<Vec<f64>> {
    let d = state.dim();
    if kernel.dim() != d {
        return Err(Error::DimensionMismatch(format!("kernel d = {}, state d = {d}", kernel.dim())));
    }
    let w = kernel.out_len();
    let mut out = vec![0.0; state.n() * w];
    if kernel.is_zero() {
        return Ok(out);
    }
    out.par_chunks_mut(w).enumerate().for_each_init(PairScratch::default, |scratch, (i, o)| {
        let _ = pair_sum(kernel, state.as_slice(), d, state.row(i), map, o, None, scratch);
    });
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NonFinite("convolution".into()))
    }
}

/// All rows `(kernel * mu)(x_i)` at once, row-major `N x out_len`.
/// Rows are computed independently, so the result does not depend on the
/// thread count.
pub fn convolve_all(kernel: &Kernel, state: &ParticleState) -> Result<Vec<f64>> {
    convolve_all_mapped(kernel, state, PairMap::Plain)
}

/// `(1/N) sum_i |x_i|^p`.
pub fn empirical_moment(state: &ParticleState, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("moment order {p} must be >= 1")));
    }
    let terms: Vec<f64> = state
        .rows()
        .map(|r| {
            let a = norm(r);
            if p == 2.0 {
                a * a
            } else {
                a.powf(p)
            }
        })
        .collect();
    Ok(sum(&terms) / state.n() as f64)
}

/// Exact quadratic Wasserstein distance between two equal-size 1-D samples.
/// Inputs need not be sorted.
pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let sq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok((sum(&sq) / a.len() as f64).sqrt())
}

/// Same-index coupling bound `sqrt((1/N) sum |x_i - y_i|^2) >= W2`.
pub fn w2_paired_bound(a: &ParticleState, b: &ParticleState) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::SizeMismatch { left: a.n(), right: b.n() });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!("d = {} vs {}", a.dim(), b.dim())));
    }
    let sq: Vec<f64> =
        a.rows().zip(b.rows()).map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum()).collect();
    Ok((sum(&sq) / a.n() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Expr, Term};
    use proptest::prelude::*;

    fn cubic() -> Kernel {
        Kernel::vector(Expr::term(Term::PowerLaw { c: -1.0, k: 3.0 }), 1).unwrap()
    }

    #[test]
    fn single_particle_convolution_vanishes() {
        let s = ParticleState::from_scalars(&[3.7]).unwrap();
        assert_eq!(convolve(&cubic(), &s, 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn cubic_two_particles() {
        let s = ParticleState::from_scalars(&[1.0, -1.0]).unwrap();
        // (f(0) + f(2)) / 2 with f(x) = -x^3
        assert_eq!(convolve(&cubic(), &s, 0).unwrap(), vec![-4.0]);
        assert_eq!(convolve(&cubic(), &s, 1).unwrap(), vec![4.0]);
    }

    #[test]
    fn linear_kernel_centres() {
        let k = Kernel::vector(Expr::term(Term::Linear(vec![1.0])), 2).unwrap();
        let s = ParticleState::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![-4.0, 5.0]]).unwrap();
        let mean = MeasureSummary::of(&s).mean;
        for i in 0..3 {
            let c = convolve(&k, &s, i).unwrap();
            for q in 0..2 {
                assert!((c[q] - (s.row(i)[q] - mean[q])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn generic_and_fast_paths_agree() {
        // powf path (k = 3.5) against the generic evaluator
        let k = Kernel::vector(Expr::term(Term::PowerLaw { c: -0.7, k: 3.5 }), 2).unwrap();
        let generic =
            Kernel::vector(Expr::term(Term::PowerLaw { c: -0.7, k: 3.5 }).plus(Term::Linear(vec![0.0])), 2).unwrap();
        let s = ParticleState::from_rows(&[vec![0.3, 1.0], vec![-1.2, 0.5], vec![2.0, -0.1]]).unwrap();
        let a = convolve_all(&k, &s).unwrap();
        let b = convolve_all(&generic, &s).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn moments() {
        let zero = ParticleState::zeros(5, 2);
        assert_eq!(empirical_moment(&zero, 3.0).unwrap(), 0.0);
        let s = ParticleState::from_scalars(&[1.0, -1.0, 1.0, -1.0]).unwrap();
        assert_eq!(empirical_moment(&s, 2.0).unwrap(), 1.0);
        let s = ParticleState::from_scalars(&[3.0, 4.0]).unwrap();
        assert!((empirical_moment(&s, 3.0).unwrap() - 45.5).abs() < 1e-12);
        assert!(empirical_moment(&s, 0.5).is_err());
    }

    #[test]
    fn w2_examples() {
        assert_eq!(w2_1d(&[1.0, 5.0, 2.0], &[1.0, 5.0, 2.0]).unwrap(), 0.0);
        assert_eq!(w2_1d(&[0.0], &[2.0]).unwrap(), 2.0);
        assert_eq!(w2_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(w2_1d(&[0.0], &[1.0, 2.0]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn sorted_matching_beats_every_permutation() {
        // brute force over all pairings of small samples
        let a: [f64; 4] = [0.3, -1.0, 2.5, 0.9];
        let b = [1.1, 0.0, -0.4, 3.0];
        let mut best = f64::INFINITY;
        let mut perm = [0usize, 1, 2, 3];
        permutations(&mut perm, 0, &mut |p| {
            let c: f64 = (0..4).map(|i| (a[i] - b[p[i]]).powi(2)).sum::<f64>() / 4.0;
            best = best.min(c.sqrt());
        });
        assert!((w2_1d(&a, &b).unwrap() - best).abs() < 1e-14);
    }

    fn permutations(p: &mut [usize; 4], k: usize, f: &mut dyn FnMut(&[usize; 4])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permutations(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn paired_bound_examples() {
        let a = ParticleState::from_scalars(&[0.0, 1.0]).unwrap();
        let b = ParticleState::from_scalars(&[1.0, 0.0]).unwrap();
        assert_eq!(w2_paired_bound(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_paired_bound(&a, &b).unwrap(), 1.0);
        assert_eq!(w2_1d(a.as_slice(), b.as_slice()).unwrap(), 0.0);
    }

    #[test]
    fn pairwise_summation_kicks_in_without_changing_results_much() {
        let n = 1500;
        let xs: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 100.0 - 5.0).collect();
        let s = ParticleState::from_scalars(&xs).unwrap();
        let k = cubic();
        let all = convolve_all(&k, &s).unwrap();
        for i in [0, 17, 999, 1499] {
            let naive: f64 = xs.iter().map(|xj| -(xs[i] - xj).powi(3)).sum::<f64>() / n as f64;
            assert!((all[i] - naive).abs() < 1e-9 * (1.0 + naive.abs()));
            assert_eq!(convolve(&k, &s, i).unwrap()[0], all[i]);
        }
    }

    #[test]
    fn result_independent_of_thread_count() {
        let xs: Vec<f64> = (0..300).map(|i| (i as f64 * 0.37).sin() * 4.0).collect();
        let s = ParticleState::from_scalars(&xs).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| convolve_all(&cubic(), &s).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    proptest! {
        #[test]
        fn odd_kernel_rows_cancel(xs in proptest::collection::vec(-10.0..10.0f64, 1..80)) {
            let s = ParticleState::from_scalars(&xs).unwrap();
            let all = convolve_all(&cubic(), &s).unwrap();
            let total: f64 = all.iter().sum();
            let scale = xs.iter().map(|x| x.abs()).fold(1.0, f64::max).powi(3);
            prop_assert!(total.abs() <= 1e-10 * xs.len() as f64 * scale);
        }

        #[test]
        fn w2_triangle(a in proptest::collection::vec(-5.0..5.0f64, 6),
                       b in proptest::collection::vec(-5.0..5.0f64, 6),
                       c in proptest::collection::vec(-5.0..5.0f64, 6)) {
            let ab = w2_1d(&a, &b).unwrap();
            let bc = w2_1d(&b, &c).unwrap();
            let ac = w2_1d(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn paired_bound_dominates(a in proptest::collection::vec(-5.0..5.0f64, 1..30), shift in -2.0..2.0f64, seed in 0u64..1000) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift * ((i as u64 * 31 + seed) % 7) as f64 / 7.0).collect();
            let sa = ParticleState::from_scalars(&a).unwrap();
            let sb = ParticleState::from_scalars(&b).unwrap();
            prop_assert!(w2_paired_bound(&sa, &sb).unwrap() + 1e-12 >= w2_1d(&a, &b).unwrap());
        }
    }
}
