//! Coefficient expressions: finite sums of a handful of primitive maps.
//!
//! An [`Expr`] evaluates into a flat output buffer holding either a vector in
//! `R^d` (`cols == 1`) or a row-major `d x cols` matrix. Vector-valued
//! primitives placed into a matrix output land on its diagonal.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measure::MeasureSummary;

type VecFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// A user supplied map of `(t, x)`. `eval` writes the full output,
/// `jacobian` (vector outputs only) writes a row-major `d x d` matrix.
#[derive(Clone)]
pub struct CustomTerm {
    pub name: String,
    pub eval: Arc<VecFn>,
    pub jacobian: Option<Arc<VecFn>>,
}

impl fmt::Debug for CustomTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTerm").field("name", &self.name).field("jacobian", &self.jacobian.is_some()).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Term {
    /// `c_k x_k` per component (one coefficient broadcasts).
    Linear(Vec<f64>),
    /// `A x` with `A` row-major `d x d`. Vector outputs only.
    Matrix(Vec<f64>),
    /// Radial power law `c x |x|^(k-1)`.
    PowerLaw {
        c: f64,
        k: f64,
    },
    /// Componentwise monomial `c_k x_k^p` (one coefficient broadcasts).
    Power {
        p: u32,
        c: Vec<f64>,
    },
    /// Constant, full output size.
    Constant(Vec<f64>),
    /// Matrix outputs only: every row equals `c x^T`.
    Broadcast(f64),
    /// `c Var(mu)` on the diagonal; needs a measure summary.
    Variance(f64),
    Custom(CustomTerm),
}

fn coef(c: &[f64], k: usize) -> f64 {
    if c.len() == 1 {
        c[0]
    } else {
        c[k]
    }
}

#[inline]
fn radial_factor(r2: f64, k: f64) -> f64 {
    if k == 3.0 {
        r2
    } else if k == 1.0 {
        1.0
    } else if k == 2.0 {
        r2.sqrt()
    } else if k == 5.0 {
        r2 * r2
    } else if r2 == 0.0 {
        0.0
    } else {
        r2.powf(0.5 * (k - 1.0))
    }
}

impl Term {
    fn check(&self, d: usize, cols: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match self {
            Term::Linear(c) | Term::Power { c, .. } => {
                if c.len() != 1 && c.len() != d {
                    return bad(format!("{self} needs 1 or {d} coefficients"));
                }
            }
            Term::Matrix(a) => {
                if cols != 1 {
                    return bad(format!("{self} is only valid for vector outputs"));
                }
                if a.len() != d * d {
                    return bad(format!("{self} needs {} entries", d * d));
                }
            }
            Term::PowerLaw { k, .. } => {
                if !(*k >= 1.0) {
                    return bad(format!("{self}: exponent must be >= 1"));
                }
            }
            Term::Constant(v) => {
                if v.len() != d * cols && v.len() != 1 {
                    return bad(format!("{self} needs {} entries", d * cols));
                }
            }
            Term::Broadcast(_) => {
                if cols != d {
                    return bad(format!("{self} needs a square d x d output"));
                }
            }
            Term::Variance(_) | Term::Custom(_) => {}
        }
        Ok(())
    }

    fn uses_measure(&self) -> bool {
        matches!(self, Term::Variance(c) if *c != 0.0)
    }

    fn add_into(&self, t: f64, x: &[f64], summary: Option<&MeasureSummary>, cols: usize, out: &mut [f64]) {
        let d = x.len();
        let diag = |k: usize| if cols == 1 { k } else { k * cols + k };
        let ndiag = if cols == 1 { d } else { d.min(cols) };
        match self {
            Term::Linear(c) => {
                for k in 0..ndiag.min(d) {
                    out[diag(k)] += coef(c, k) * x[k];
                }
            }
            Term::Matrix(a) => {
                for (r, o) in out.iter_mut().enumerate().take(d) {
                    let row = &a[r * d..(r + 1) * d];
                    *o += row.iter().zip(x).map(|(a, x)| a * x).sum::<f64>();
                }
            }
            Term::PowerLaw { c, k } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let s = c * radial_factor(r2, *k);
                for kk in 0..ndiag {
                    out[diag(kk)] += s * x[kk];
                }
            }
            Term::Power { p, c } => {
                for k in 0..ndiag {
                    out[diag(k)] += coef(c, k) * x[k].powi(*p as i32);
                }
            }
            Term::Constant(v) => {
                if v.len() == 1 {
                    for k in 0..ndiag {
                        out[diag(k)] += v[0];
                    }
                } else {
                    for (o, v) in out.iter_mut().zip(v) {
                        *o += v;
                    }
                }
            }
            Term::Broadcast(c) => {
                for r in 0..d {
                    for (cc, xv) in x.iter().enumerate() {
                        out[r * cols + cc] += c * xv;
                    }
                }
            }
            Term::Variance(c) => {
                let var = summary.map_or(0.0, |s| s.variance);
                for k in 0..ndiag {
                    out[diag(k)] += c * var;
                }
            }
            Term::Custom(c) => {
                let mut tmp = vec![0.0; out.len()];
                (c.eval)(t, x, &mut tmp);
                for (o, v) in out.iter_mut().zip(tmp) {
                    *o += v;
                }
            }
        }
    }

    /// Adds `d(term)/dx` into `jac` (row-major `d x d`). Vector outputs only.
    /// Returns `false` when no analytic form exists.
    fn add_jacobian(&self, t: f64, x: &[f64], jac: &mut [f64]) -> bool {
        let d = x.len();
        match self {
            Term::Linear(c) => {
                for k in 0..d {
                    jac[k * d + k] += coef(c, k);
                }
            }
            Term::Matrix(a) => {
                for (j, a) in jac.iter_mut().zip(a) {
                    *j += a;
                }
            }
            Term::PowerLaw { c, k } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                let s = c * radial_factor(r2, *k);
                // c (k-1) |x|^(k-3) x x^T
                let w = if r2 == 0.0 {
                    0.0
                } else if *k == 3.0 {
                    2.0 * c
                } else {
                    c * (k - 1.0) * radial_factor(r2, *k) / r2
                };
                for r in 0..d {
                    jac[r * d + r] += s;
                    for q in 0..d {
                        jac[r * d + q] += w * x[r] * x[q];
                    }
                }
            }
            Term::Power { p, c } => {
                if *p > 0 {
                    for k in 0..d {
                        jac[k * d + k] += coef(c, k) * (*p as f64) * x[k].powi(*p as i32 - 1);
                    }
                }
            }
            Term::Constant(_) | Term::Variance(_) => {}
            Term::Broadcast(_) => return false,
            Term::Custom(c) => match &c.jacobian {
                Some(jf) => {
                    let mut tmp = vec![0.0; d * d];
                    jf(t, x, &mut tmp);
                    for (j, v) in jac.iter_mut().zip(tmp) {
                        *j += v;
                    }
                }
                None => return false,
            },
        }
        true
    }
}

fn fmt_list(f: &mut fmt::Formatter<'_>, v: &[f64]) -> fmt::Result {
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{x}")?;
    }
    Ok(())
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Linear(c) => {
                write!(f, "linear(")?;
                fmt_list(f, c)?;
                write!(f, ")")
            }
            Term::Matrix(a) => {
                write!(f, "matrix(")?;
                fmt_list(f, a)?;
                write!(f, ")")
            }
            Term::PowerLaw { c, k } => write!(f, "powerlaw({c}, {k})"),
            Term::Power { p, c } => {
                write!(f, "power({p}, ")?;
                fmt_list(f, c)?;
                write!(f, ")")
            }
            Term::Constant(v) => {
                write!(f, "const(")?;
                fmt_list(f, v)?;
                write!(f, ")")
            }
            Term::Broadcast(c) => write!(f, "broadcast({c})"),
            Term::Variance(c) => write!(f, "variance({c})"),
            Term::Custom(t) => write!(f, "custom:{}", t.name),
        }
    }
}

/// A sum of [`Term`]s. The empty sum is the zero map.
#[derive(Debug, Clone, Default)]
pub struct Expr {
    terms: Vec<Term>,
}

impl Expr {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn term(t: Term) -> Self {
        Self { terms: vec![t] }
    }

    pub fn plus(mut self, t: Term) -> Self {
        self.terms.push(t);
        self
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uses_measure(&self) -> bool {
        self.terms.iter().any(Term::uses_measure)
    }

    pub(crate) fn validate(&self, d: usize, cols: usize) -> Result<()> {
        self.terms.iter().try_for_each(|t| t.check(d, cols))
    }

    /// Overwrites `out` (length `x.len() * cols`) with the value at `x`.
    pub fn eval_into(&self, t: f64, x: &[f64], summary: Option<&MeasureSummary>, cols: usize, out: &mut [f64]) {
        out.fill(0.0);
        for term in &self.terms {
            term.add_into(t, x, summary, cols, out);
        }
    }

    /// Overwrites `jac` with the `d x d` Jacobian of a vector-valued expression,
    /// falling back to central differences for terms without an analytic form.
    pub fn jacobian_into(&self, t: f64, x: &[f64], summary: Option<&MeasureSummary>, jac: &mut [f64]) {
        jac.fill(0.0);
        let mut numeric = Vec::new();
        for term in &self.terms {
            if !term.add_jacobian(t, x, jac) {
                numeric.push(term.clone());
            }
        }
        if !numeric.is_empty() {
            let rest = Expr::new(numeric);
            let d = x.len();
            let mut fd = vec![0.0; d * d];
            central_difference(&rest, t, x, summary, &mut fd);
            for (j, v) in jac.iter_mut().zip(fd) {
                *j += v;
            }
        }
    }
}

/// Central finite-difference Jacobian with step `1e-6 (1 + |x|)`.
pub fn central_difference(e: &Expr, t: f64, x: &[f64], summary: Option<&MeasureSummary>, jac: &mut [f64]) {
    let d = x.len();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = 1e-6 * (1.0 + norm);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for q in 0..d {
        xp[q] = x[q] + step;
        e.eval_into(t, &xp, summary, 1, &mut fp);
        xp[q] = x[q] - step;
        e.eval_into(t, &xp, summary, 1, &mut fm);
        xp[q] = x[q];
        for r in 0..d {
            jac[r * d + q] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
}

impl From<Term> for Expr {
    fn from(t: Term) -> Self {
        Expr::term(t)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "zero");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

impl FromStr for Expr {
    type Err = Error;

    /// Parses `name(args) + name(args) + ...`. Accepted names: `zero`,
    /// `linear`, `matrix`, `powerlaw`, `power`, `square`, `cube`, `const`,
    /// `broadcast`, `variance`.
    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: String| Error::Parse { input: s.to_string(), reason };
        let mut terms = Vec::new();
        for raw in split_terms(s) {
            let piece = raw.trim();
            if piece.is_empty() {
                return Err(err("empty term".into()));
            }
            if piece == "zero" {
                continue;
            }
            let open = piece.find('(').ok_or_else(|| err(format!("`{piece}`: expected name(args)")))?;
            if !piece.ends_with(')') {
                return Err(err(format!("`{piece}`: missing `)`")));
            }
            let name = piece[..open].trim();
            let args: Vec<f64> = piece[open + 1..piece.len() - 1]
                .split(',')
                .filter(|a| !a.trim().is_empty())
                .map(|a| a.trim().parse::<f64>().map_err(|e| err(format!("`{a}`: {e}"))))
                .collect::<Result<_>>()?;
            let need = |n: usize| -> Result<()> {
                if args.len() < n {
                    Err(err(format!("`{name}` needs at least {n} argument(s)")))
                } else {
                    Ok(())
                }
            };
            let exact = |n: usize| -> Result<()> {
                if args.len() != n {
                    Err(err(format!("`{name}` takes exactly {n} argument(s)")))
                } else {
                    Ok(())
                }
            };
            let term = match name {
                "linear" => {
                    need(1)?;
                    Term::Linear(args)
                }
                "matrix" => {
                    need(1)?;
                    Term::Matrix(args)
                }
                "powerlaw" => {
                    exact(2)?;
                    Term::PowerLaw { c: args[0], k: args[1] }
                }
                "power" => {
                    need(2)?;
                    let p = args[0];
                    if p < 0.0 || p.fract() != 0.0 {
                        return Err(err(format!("power exponent {p} must be a nonnegative integer")));
                    }
                    Term::Power { p: p as u32, c: args[1..].to_vec() }
                }
                "square" => {
                    need(1)?;
                    Term::Power { p: 2, c: args }
                }
                "cube" => {
                    need(1)?;
                    Term::Power { p: 3, c: args }
                }
                "const" => {
                    need(1)?;
                    Term::Constant(args)
                }
                "broadcast" => {
                    exact(1)?;
                    Term::Broadcast(args[0])
                }
                "variance" => {
                    exact(1)?;
                    Term::Variance(args[0])
                }
                other => return Err(err(format!("unknown primitive `{other}`"))),
            };
            terms.push(term);
        }
        Ok(Expr { terms })
    }
}

fn split_terms(s: &str) -> Vec<&str> {
    // `+` separates terms only outside parentheses; a `+` right after `e`/`E`
    // or `(`/`,` belongs to a number.
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let bytes = s.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(&s[start..]);
    out
}
