//! Coefficient bundles `(f, f_sigma, u, b, sigma)` of a McKean-Vlasov SDE
//!
//! ```text
//! dX = (v(X, mu) + b(t, X, mu)) dt + sigma_bar(t, X, mu) dW
//! v(x, mu)         = (f * mu)(x) + u(x, mu)
//! sigma_bar(t,x,mu) = sigma(t, x, mu) + (f_sigma * mu)(x)
//! ```
//!
//! Measure dependence of `u`, `b` and `sigma` enters only through a
//! [`MeasureSummary`]; the convolutions are computed in [`crate::measure`].

mod builtin;
mod expr;
pub mod verify;

use serde::{Deserialize, Serialize};

pub use builtin::{builtin_model, BUILTIN_MODELS};
pub use expr::{central_difference, CustomTerm, Expr, Term};

use crate::error::{Error, Result};
use crate::measure::MeasureSummary;

/// An interaction kernel `f: R^d -> R^d` or `f_sigma: R^d -> R^{d x l}`.
#[derive(Debug, Clone)]
pub struct Kernel {
    expr: Expr,
    d: usize,
    cols: usize,
    /// Declared `f(-x) = -f(x)`.
    pub declared_odd: bool,
    /// Declared to satisfy the additional symmetry bound.
    pub declared_symmetry: bool,
}

impl Kernel {
    /// Vector kernel `R^d -> R^d`.
    pub fn vector(expr: Expr, d: usize) -> Result<Self> {
        Self::with_cols(expr, d, 1)
    }

    /// Matrix kernel `R^d -> R^{d x l}`.
    pub fn matrix(expr: Expr, d: usize, l: usize) -> Result<Self> {
        Self::with_cols(expr, d, l)
    }

    fn with_cols(expr: Expr, d: usize, cols: usize) -> Result<Self> {
        if d == 0 || cols == 0 {
            return Err(Error::DimensionMismatch("kernel dimensions must be positive".into()));
        }
        expr.validate(d, cols)?;
        if expr.uses_measure() {
            return Err(Error::InvalidModel(format!("kernel `{expr}` may not depend on the measure")));
        }
        let k = Self { expr, d, cols, declared_odd: false, declared_symmetry: false };
        let mut at0 = vec![0.0; d * cols];
        k.eval(&vec![0.0; d], &mut at0);
        if at0.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidModel(format!("kernel `{}` must vanish at the origin", k.expr)));
        }
        Ok(k)
    }

    pub fn zero(d: usize, cols: usize) -> Self {
        Self { expr: Expr::zero(), d, cols, declared_odd: true, declared_symmetry: true }
    }

    pub fn odd(mut self, odd: bool) -> Self {
        self.declared_odd = odd;
        self
    }

    pub fn symmetric(mut self, sym: bool) -> Self {
        self.declared_symmetry = sym;
        self
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Output columns: 1 for `f`, `l` for `f_sigma`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn out_len(&self) -> usize {
        self.d * self.cols
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    /// Single radial power-law term `c x |x|^(k-1)`, if that is all it is.
    pub(crate) fn as_power_law(&self) -> Option<(f64, f64)> {
        match self.expr.terms() {
            [Term::PowerLaw { c, k }] if self.cols == 1 => Some((*c, *k)),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        self.expr.eval_into(0.0, z, None, self.cols, out);
    }

    /// `d x d` Jacobian; vector kernels only.
    pub fn jacobian(&self, z: &[f64], jac: &mut [f64]) {
        debug_assert_eq!(self.cols, 1);
        self.expr.jacobian_into(0.0, z, None, jac);
    }
}

/// A coefficient `(t, x, mu) -> R^d` or `R^{d x l}`.
#[derive(Debug, Clone)]
pub struct Coefficient {
    expr: Expr,
    d: usize,
    cols: usize,
}

impl Coefficient {
    pub fn vector(expr: Expr, d: usize) -> Result<Self> {
        expr.validate(d, 1)?;
        Ok(Self { expr, d, cols: 1 })
    }

    pub fn matrix(expr: Expr, d: usize, l: usize) -> Result<Self> {
        expr.validate(d, l)?;
        Ok(Self { expr, d, cols: l })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn out_len(&self) -> usize {
        self.d * self.cols
    }

    pub fn is_zero(&self) -> bool {
        self.expr.is_zero()
    }

    pub fn uses_measure(&self) -> bool {
        self.expr.uses_measure()
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        self.expr.eval_into(t, x, Some(mu), self.cols, out);
    }

    /// `d x d` Jacobian in `x` with the measure frozen; vector coefficients only.
    pub fn jacobian(&self, t: f64, x: &[f64], mu: &MeasureSummary, jac: &mut [f64]) {
        debug_assert_eq!(self.cols, 1);
        self.expr.jacobian_into(t, x, Some(mu), jac);
    }
}

/// Declared structural constants. Unset entries are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConstants {
    /// One-sided Lipschitz constant of the `(f, f_sigma)` pair.
    pub l_f1: Option<f64>,
    pub l_f2: Option<f64>,
    pub l_f3: Option<f64>,
    /// Offset constants of the `(u, sigma)` monotonicity bound.
    pub l_us1: Option<f64>,
    pub l_us2: Option<f64>,
    pub l_us3: Option<f64>,
    pub l_us4: Option<f64>,
    /// Lipschitz constant of `b` (squared form).
    pub l_b1: Option<f64>,
    /// One-sided Lipschitz constants of `b` in space and measure.
    pub l_b2: Option<f64>,
    pub l_b3: Option<f64>,
    pub q1: Option<f64>,
    pub q2: Option<f64>,
    /// Moment order, `m > 2`.
    pub m: Option<f64>,
}

impl ModelConstants {
    pub fn q(&self) -> Option<f64> {
        match (self.q1, self.q2) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    fn need(v: Option<f64>, name: &'static str) -> Result<f64> {
        match v {
            Some(x) if x.is_finite() => Ok(x),
            _ => Err(Error::MissingConstant(name)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(m) = self.m {
            if !(m > 2.0) {
                return Err(Error::InvalidModel(format!("moment order m = {m} must exceed 2")));
            }
        }
        for (name, v) in [("q1", self.q1), ("q2", self.q2)] {
            if matches!(v, Some(q) if !(q >= 0.0)) {
                return Err(Error::InvalidModel(format!("{name} must be nonnegative")));
            }
        }
        Ok(())
    }
}

/// Stepsize-constraint parameter: admissible stepsizes satisfy
/// `h < min(1, 1/zeta)` (no upper bound from `zeta` when it is zero).
pub fn compute_zeta(c: &ModelConstants) -> Result<f64> {
    let lf = ModelConstants::need(c.l_f1, "l_f1")?;
    let l1 = ModelConstants::need(c.l_us1, "l_us1")?;
    let l2 = ModelConstants::need(c.l_us2, "l_us2")?;
    let a = 2.0 * (lf + l1);
    let b = 2.0 * (2.0 * lf.max(0.0) + l1 + l2);
    Ok(a.max(b).max(0.0))
}

/// Largest admissible stepsize bound `min(1, 1/zeta)`.
pub fn stepsize_bound(c: &ModelConstants) -> Result<f64> {
    let zeta = compute_zeta(c)?;
    Ok(if zeta > 0.0 { (1.0 / zeta).min(1.0) } else { 1.0 })
}

/// Mean-square contraction rate bound: coupled SSM runs satisfy
/// `E|X_n - Z_n|^2 <= (1 + beta h)^n E|X_0 - Z_0|^2`.
pub fn contraction_beta(c: &ModelConstants, h: f64) -> Result<f64> {
    let lf = ModelConstants::need(c.l_f1, "l_f1")?.max(0.0);
    let l1 = ModelConstants::need(c.l_us1, "l_us1")?;
    let l2 = ModelConstants::need(c.l_us2, "l_us2")?;
    let b1 = ModelConstants::need(c.l_b1, "l_b1")?;
    let b2 = ModelConstants::need(c.l_b2, "l_b2")?;
    let b3 = ModelConstants::need(c.l_b3, "l_b3")?;
    let rho1 = 4.0 * lf + 2.0 * l1 + 2.0 * l2 + 2.0 * b2 + 2.0 * b3;
    let denom = 1.0 - h * (4.0 * lf + 2.0 * l1 + 2.0 * l2);
    if denom <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "stepsize {h} too large for the contraction bound (denominator {denom})"
        )));
    }
    Ok((rho1 + 2.0 * b1 * h) / denom)
}

/// A complete McKean-Vlasov model. Immutable once built.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    d: usize,
    l: usize,
    f: Kernel,
    f_sigma: Kernel,
    u: Coefficient,
    b: Coefficient,
    sigma: Coefficient,
    pub constants: ModelConstants,
}

/// Expressions for the five coefficients, used to assemble a [`Model`].
#[derive(Debug, Clone, Default)]
pub struct ModelSpec {
    pub name: String,
    pub d: usize,
    pub l: usize,
    pub f: Expr,
    pub f_sigma: Expr,
    pub u: Expr,
    pub b: Expr,
    pub sigma: Expr,
    pub f_odd: bool,
    pub f_symmetric: bool,
    pub constants: ModelConstants,
}

impl Model {
    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let ModelSpec { name, d, l, f, f_sigma, u, b, sigma, f_odd, f_symmetric, constants } = spec;
        if d == 0 || l == 0 {
            return Err(Error::DimensionMismatch(format!("d = {d}, l = {l} must be positive")));
        }
        constants.validate()?;
        let f =
            Kernel::vector(f, d).map_err(|e| Error::InvalidModel(format!("f: {e}")))?.odd(f_odd).symmetric(f_symmetric);
        let f_sigma = Kernel::matrix(f_sigma, d, l).map_err(|e| Error::InvalidModel(format!("f_sigma: {e}")))?;
        let u = Coefficient::vector(u, d).map_err(|e| Error::InvalidModel(format!("u: {e}")))?;
        let b = Coefficient::vector(b, d).map_err(|e| Error::InvalidModel(format!("b: {e}")))?;
        let sigma = Coefficient::matrix(sigma, d, l).map_err(|e| Error::InvalidModel(format!("sigma: {e}")))?;
        if let (Some(_), Some(_), Some(_)) = (constants.l_f1, constants.l_us1, constants.l_us2) {
            let z = compute_zeta(&constants)?;
            if !z.is_finite() {
                return Err(Error::InvalidModel("zeta is not finite".into()));
            }
        }
        Ok(Self { name, d, l, f, f_sigma, u, b, sigma, constants })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise_dim(&self) -> usize {
        self.l
    }

    pub fn f(&self) -> &Kernel {
        &self.f
    }

    pub fn f_sigma(&self) -> &Kernel {
        &self.f_sigma
    }

    pub fn u(&self) -> &Coefficient {
        &self.u
    }

    pub fn b(&self) -> &Coefficient {
        &self.b
    }

    pub fn sigma(&self) -> &Coefficient {
        &self.sigma
    }

    pub fn zeta(&self) -> Result<f64> {
        compute_zeta(&self.constants)
    }

    /// Whether any coefficient needs measure summaries beyond the convolutions.
    pub fn needs_summary(&self) -> bool {
        self.u.uses_measure() || self.b.uses_measure() || self.sigma.uses_measure()
    }

    /// Expressions of the five coefficients, in the order `f, f_sigma, u, b, sigma`.
    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            d: self.d,
            l: self.l,
            f: self.f.expr().clone(),
            f_sigma: self.f_sigma.expr().clone(),
            u: self.u.expr().clone(),
            b: self.b.expr().clone(),
            sigma: self.sigma.expr().clone(),
            f_odd: self.f.declared_odd,
            f_symmetric: self.f.declared_symmetry,
            constants: self.constants.clone(),
        }
    }
}
