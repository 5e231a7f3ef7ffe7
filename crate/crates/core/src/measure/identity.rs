//! Double-sum integral identities over empirical measures, used as
//! numerical checks of the moment estimates.

use super::{norm, ParticleState};
use crate::error::{Error, Result};
use crate::model::Kernel;
use crate::sum::sum;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Both sides of
///
/// ```text
/// sum_ij |x_i|^(p-2) <x_i, f(x_i - x_j)>
///   = sum_ij 1/2 |x_i|^(p-2) <x_i - x_j, f(x_i - x_j)>
///          + 1/4 (|x_i|^(p-2) - |x_j|^(p-2)) <x_i + x_j, f(x_i - x_j)>
/// ```
///
/// with `1/N^2` weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl DecompositionResidual {
    /// `residual <= rel * (1 + |lhs|)`
    pub fn holds(&self, rel: f64) -> bool {
        self.residual <= rel * (1.0 + self.lhs.abs())
    }
}

pub fn identity_decomposition_check(f: &Kernel, state: &ParticleState, p: f64) -> Result<DecompositionResidual> {
    if !(p > 2.0) {
        return Err(Error::InvalidArgument(format!("p = {p} must exceed 2")));
    }
    check_dims(f, state)?;
    let d = state.dim();
    let n = state.n();
    let w: Vec<f64> = state.rows().map(|r| norm(r).powf(p - 2.0)).collect();
    let mut lhs = Vec::with_capacity(n * n);
    let mut rhs = Vec::with_capacity(n * n);
    let mut z = vec![0.0; d];
    let mut s = vec![0.0; d];
    let mut fz = vec![0.0; d];
    for i in 0..n {
        let xi = state.row(i);
        for j in 0..n {
            let xj = state.row(j);
            for q in 0..d {
                z[q] = xi[q] - xj[q];
                s[q] = xi[q] + xj[q];
            }
            f.eval(&z, &mut fz);
            lhs.push(w[i] * dot(xi, &fz));
            rhs.push(0.5 * w[i] * dot(&z, &fz) + 0.25 * (w[i] - w[j]) * dot(&s, &fz));
        }
    }
    let nn = (n * n) as f64;
    let (lhs, rhs) = (sum(&lhs) / nn, sum(&rhs) / nn);
    Ok(DecompositionResidual { lhs, rhs, residual: (lhs - rhs).abs() })
}

/// Quantities of the odd-kernel moment inequality
/// `sum_ij <x_i, f(x_i - x_j)> + (m - 1)|f_sigma(x_i - x_j)|^2 <= L_f1 Var(mu)`
/// (`1/N^2` weights).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OddKernelIdentity {
    pub lhs: f64,
    /// `L_f1` times the empirical variance.
    pub bound: f64,
    /// `sum_ij <x_i, f(x_i - x_j)>`
    pub drift_sum: f64,
    /// `sum_ij 1/2 <x_i - x_j, f(x_i - x_j)>`, equal to `drift_sum` for odd `f`.
    pub symmetrised: f64,
}

impl OddKernelIdentity {
    pub fn inequality_holds(&self, tol: f64) -> bool {
        self.lhs <= self.bound + tol
    }

    pub fn equality_residual(&self) -> f64 {
        (self.drift_sum - self.symmetrised).abs()
    }
}

pub fn identity_odd_kernel_check(
    f: &Kernel,
    f_sigma: &Kernel,
    state: &ParticleState,
    m: f64,
    l_f1: f64,
) -> Result<OddKernelIdentity> {
    if !(m > 2.0) {
        return Err(Error::InvalidArgument(format!("m = {m} must exceed 2")));
    }
    check_dims(f, state)?;
    check_dims(f_sigma, state)?;
    let d = state.dim();
    let n = state.n();
    let mut lhs = Vec::with_capacity(n * n);
    let mut drift = Vec::with_capacity(n * n);
    let mut half = Vec::with_capacity(n * n);
    let mut z = vec![0.0; d];
    let mut fz = vec![0.0; d];
    let mut gz = vec![0.0; f_sigma.out_len()];
    for i in 0..n {
        let xi = state.row(i);
        for j in 0..n {
            let xj = state.row(j);
            for q in 0..d {
                z[q] = xi[q] - xj[q];
            }
            f.eval(&z, &mut fz);
            f_sigma.eval(&z, &mut gz);
            let a = dot(xi, &fz);
            let g2: f64 = gz.iter().map(|v| v * v).sum();
            drift.push(a);
            half.push(0.5 * dot(&z, &fz));
            lhs.push(a + (m - 1.0) * g2);
        }
    }
    let nn = (n * n) as f64;
    let summary = super::MeasureSummary::of(state);
    Ok(OddKernelIdentity {
        lhs: sum(&lhs) / nn,
        bound: l_f1 * summary.variance,
        drift_sum: sum(&drift) / nn,
        symmetrised: sum(&half) / nn,
    })
}

fn check_dims(k: &Kernel, state: &ParticleState) -> Result<()> {
    if k.dim() != state.dim() {
        return Err(Error::DimensionMismatch(format!("kernel d = {}, state d = {}", k.dim(), state.dim())));
    }
    Ok(())
}
