//! Solver for the implicit stage `Y = X + h V(Y)` of the split-step method,
//! `V_i(Y) = (f * mu^Y)(Y_i) + u(Y_i, mu^Y)`.
//!
//! Each sweep freezes the empirical measure at the current iterate and takes
//! per-particle Newton steps on the `d`-dimensional problems (block Jacobi).
//! Sweeps are combined by Anderson mixing, which matters for stiff first
//! steps where the plain block iteration contracts slowly. When the sweeps
//! stall (strongly coupled clusters make the block map oscillate) the solver
//! switches to Newton-Krylov on the full system: restarted GMRES with the
//! block diagonal as preconditioner, finite-difference Jacobian products and
//! a backtracking line search.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{norm, pair_sum, MeasureSummary, PairMap, PairScratch, ParticleState};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual tolerance relative to `1 + max_i |X_i|`.
    pub tol: f64,
    pub max_outer: usize,
    /// Newton iterations per particle and sweep.
    pub max_newton: usize,
    /// Step length of un-accelerated sweeps, in `(0, 1]`.
    pub damping: f64,
    /// Anderson history length; 0 disables mixing.
    pub anderson: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_outer: 100, max_newton: 50, damping: 1.0, anderson: 5 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tol = {} must be positive", self.tol)));
        }
        if self.max_outer == 0 || self.max_newton == 0 {
            return Err(Error::InvalidArgument("solver iteration caps must be >= 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidArgument(format!("damping {} must lie in (0, 1]", self.damping)));
        }
        Ok(())
    }
}

/// Result of the implicit stage.
#[derive(Debug, Clone)]
pub struct StageState {
    pub y: ParticleState,
    /// `max_i |Y_i - X_i - h V_i(Y)|`
    pub residual_norm: f64,
    /// Sweeps, each of which evaluates the residual once.
    pub iterations: usize,
    /// Acceptance threshold that was met.
    pub threshold: f64,
}

/// Sweeps without 10% residual reduction over this window trigger the
/// Newton-Krylov fallback.
const STALL_WINDOW: usize = 5;
const GMRES_RESTART: usize = 30;
const GMRES_MAX: usize = 150;

struct Sweep {
    /// Newton-updated iterate.
    g: Vec<f64>,
    residual: f64,
    /// Round-off floor of the residual evaluation.
    floor: f64,
}

fn solve_small(jac: &[f64], rhs: &mut [f64]) -> bool {
    let d = rhs.len();
    if d == 1 {
        if jac[0] == 0.0 || !jac[0].is_finite() {
            return false;
        }
        rhs[0] /= jac[0];
        return true;
    }
    let a = DMatrix::from_row_slice(d, d, jac);
    match a.lu().solve(&DVector::from_column_slice(rhs)) {
        Some(x) => {
            rhs.copy_from_slice(x.as_slice());
            true
        }
        None => false,
    }
}

#[derive(Default)]
struct ParticleScratch {
    pairs: PairScratch,
    conv: Vec<f64>,
    jac: Vec<f64>,
    uval: Vec<f64>,
    ujac: Vec<f64>,
    phi: Vec<f64>,
    y: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    model: &Model,
    x: &ParticleState,
    y: &[f64],
    t: f64,
    h: f64,
    cfg: &SolverConfig,
    forcing: f64,
    out: &mut [f64],
) -> Result<Sweep> {
    let d = x.dim();
    let n = x.n();
    let summary = if model.u().uses_measure() {
        MeasureSummary::of(&ParticleState::new(n, d, y.to_vec())?)
    } else {
        MeasureSummary::dirac(&vec![0.0; d])
    };
    let f = model.f();
    let u = model.u();
    let has_u = !u.is_zero();
    let sqrt_n = (n as f64).sqrt();
    let stats: Vec<(f64, f64, bool)> = out
        .par_chunks_mut(d)
        .enumerate()
        .map_init(ParticleScratch::default, |s, (i, gi)| {
            s.conv.resize(d, 0.0);
            s.jac.resize(d * d, 0.0);
            s.uval.resize(d, 0.0);
            s.ujac.resize(d * d, 0.0);
            s.phi.resize(d, 0.0);
            s.y.clear();
            s.y.extend_from_slice(&y[i * d..(i + 1) * d]);
            let xi = x.row(i);
            let (mut r0, mut floor) = (0.0, 0.0);
            for k in 0..cfg.max_newton {
                let mag = if f.is_zero() {
                    s.conv.fill(0.0);
                    s.jac.fill(0.0);
                    0.0
                } else {
                    pair_sum(f, y, d, &s.y, PairMap::Plain, &mut s.conv, Some(&mut s.jac), &mut s.pairs)
                };
                if has_u {
                    u.eval(t, &s.y, &summary, &mut s.uval);
                    u.jacobian(t, &s.y, &summary, &mut s.ujac);
                } else {
                    s.uval.fill(0.0);
                    s.ujac.fill(0.0);
                }
                for (q, p) in s.phi.iter_mut().enumerate() {
                    *p = s.y[q] - xi[q] - h * (s.conv[q] + s.uval[q]);
                }
                if k == 0 {
                    r0 = norm(&s.phi);
                    let scale = norm(xi) + norm(&s.y) + h * (mag + norm(&s.uval));
                    floor = 8.0 * f64::EPSILON * sqrt_n * scale;
                    if r0 == 0.0 {
                        break;
                    }
                }
                // J = I - h (conv' + u')
                for (jv, uv) in s.jac.iter_mut().zip(&s.ujac) {
                    *jv = -h * (*jv + uv);
                }
                for q in 0..d {
                    s.jac[q * d + q] += 1.0;
                }
                if !solve_small(&s.jac, &mut s.phi) {
                    return (r0, floor, false);
                }
                let step = norm(&s.phi);
                for q in 0..d {
                    s.y[q] -= s.phi[q];
                }
                if !(step > forcing) {
                    break;
                }
            }
            gi.copy_from_slice(&s.y);
            (r0, floor, true)
        })
        .collect();
    let mut residual: f64 = 0.0;
    let mut floor: f64 = 0.0;
    for (r, fl, ok) in stats {
        if !ok || !r.is_finite() {
            return Err(Error::NonFinite("implicit stage iterate".into()));
        }
        residual = residual.max(r);
        floor = floor.max(fl);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("implicit stage iterate".into()));
    }
    Ok(Sweep { g: out.to_vec(), residual, floor })
}

/// Type-II Anderson mixing on the map `Y -> G(Y)`.
struct Anderson {
    depth: usize,
    prev: Option<(Vec<f64>, Vec<f64>)>,
    df: Vec<Vec<f64>>,
    dg: Vec<Vec<f64>>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Self { depth, prev: None, df: Vec::new(), dg: Vec::new() }
    }

    fn reset(&mut self) {
        self.prev = None;
        self.df.clear();
        self.dg.clear();
    }

    /// Next iterate from `g = G(y)` and `f = g - y`.
    fn step(&mut self, g: &[f64], f: &[f64]) -> Vec<f64> {
        if let Some((gp, fp)) = self.prev.take() {
            self.df.push(f.iter().zip(&fp).map(|(a, b)| a - b).collect());
            self.dg.push(g.iter().zip(&gp).map(|(a, b)| a - b).collect());
            if self.df.len() > self.depth {
                self.df.remove(0);
                self.dg.remove(0);
            }
        }
        self.prev = Some((g.to_vec(), f.to_vec()));
        let m = self.df.len();
        if m == 0 {
            return g.to_vec();
        }
        let n = f.len();
        let a = DMatrix::from_fn(n, m, |r, c| self.df[c][r]);
        let gamma = match a.svd(true, true).solve(&DVector::from_column_slice(f), 1e-14) {
            Ok(v) if v.iter().all(|x| x.is_finite()) => v,
            _ => {
                self.reset();
                return g.to_vec();
            }
        };
        let mut next = g.to_vec();
        for (c, gm) in gamma.iter().enumerate() {
            for (o, v) in next.iter_mut().zip(&self.dg[c]) {
                *o -= gm * v;
            }
        }
        next
    }
}

/// Solves `Y = X + h V(Y)` starting from `guess` (default `X`).
pub fn solve_implicit_stage(
    model: &Model,
    x: &ParticleState,
    t: f64,
    h: f64,
    cfg: &SolverConfig,
    guess: Option<&ParticleState>,
) -> Result<StageState> {
    cfg.validate()?;
    let (n, d) = (x.n(), x.dim());
    if d != model.dim() {
        return Err(Error::DimensionMismatch(format!("state d = {d}, model d = {}", model.dim())));
    }
    let mut y = match guess {
        Some(g) if g.n() == n && g.dim() == d => g.as_slice().to_vec(),
        Some(g) => return Err(Error::SizeMismatch { left: g.n() * g.dim(), right: n * d }),
        None => x.as_slice().to_vec(),
    };
    let base = cfg.tol * (1.0 + x.max_norm());
    let mut buf = vec![0.0; n * d];
    let mut mixer = Anderson::new(cfg.anderson);
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_outer);
    let mut forcing = f64::INFINITY;
    let mut last = f64::NAN;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for it in 1..=cfg.max_outer {
        let sw = sweep(model, x, &y, t, h, cfg, forcing, &mut buf)?;
        last = sw.residual;
        let threshold = base + sw.floor;
        if sw.residual <= threshold {
            let y = ParticleState::new(n, d, y)?.at(x.time, x.step);
            return Ok(StageState { y, residual_norm: sw.residual, iterations: it, threshold });
        }
        if best.as_ref().is_none_or(|b| sw.residual < b.0) {
            best = Some((sw.residual, y.clone()));
        }
        if let Some(&prev) = history.last() {
            if sw.residual > prev {
                mixer.reset();
            }
        }
        if history.len() >= STALL_WINDOW && sw.residual > 0.9 * history[history.len() - STALL_WINDOW] {
            let start = best.map(|b| b.1).unwrap_or(y);
            return newton_krylov(model, x, start, t, h, base, cfg.max_outer, it);
        }
        history.push(sw.residual);
        forcing = sw.residual;
        let f: Vec<f64> = sw.g.iter().zip(&y).map(|(g, y)| g - y).collect();
        y = if cfg.anderson > 0 {
            mixer.step(&sw.g, &f)
        } else {
            y.iter().zip(&f).map(|(y, f)| y + cfg.damping * f).collect()
        };
    }
    Err(Error::NonConvergence { residual: last, iterations: cfg.max_outer })
}

/// Full residual `Y - X - h V(Y)`, its per-particle maximum, the round-off
/// floor and, on request, the diagonal blocks of the Jacobian.
struct Residual {
    phi: Vec<f64>,
    max: f64,
    floor: f64,
}

fn full_residual(
    model: &Model,
    x: &ParticleState,
    y: &[f64],
    t: f64,
    h: f64,
    blocks: Option<&mut [f64]>,
) -> Result<Residual> {
    let (n, d) = (x.n(), x.dim());
    let summary = if model.u().uses_measure() {
        MeasureSummary::of(&ParticleState::new(n, d, y.to_vec())?)
    } else {
        MeasureSummary::dirac(&vec![0.0; d])
    };
    let (f, u) = (model.f(), model.u());
    let want = blocks.is_some();
    let sqrt_n = (n as f64).sqrt();
    let mut phi = vec![0.0; n * d];
    let mut jacs = vec![0.0; n * d * d];
    let stats: Vec<(f64, f64)> = phi
        .par_chunks_mut(d)
        .enumerate()
        .zip(jacs.par_chunks_mut(d * d))
        .map_init(ParticleScratch::default, |s, ((i, out), block)| {
            s.conv.resize(d, 0.0);
            s.jac.resize(d * d, 0.0);
            s.uval.resize(d, 0.0);
            s.ujac.resize(d * d, 0.0);
            let yi = &y[i * d..(i + 1) * d];
            let mag = if f.is_zero() {
                s.conv.fill(0.0);
                s.jac.fill(0.0);
                0.0
            } else {
                let j = if want { Some(&mut s.jac[..]) } else { None };
                pair_sum(f, y, d, yi, PairMap::Plain, &mut s.conv, j, &mut s.pairs)
            };
            if u.is_zero() {
                s.uval.fill(0.0);
                s.ujac.fill(0.0);
            } else {
                u.eval(t, yi, &summary, &mut s.uval);
                if want {
                    u.jacobian(t, yi, &summary, &mut s.ujac);
                }
            }
            let xi = x.row(i);
            for q in 0..d {
                out[q] = yi[q] - xi[q] - h * (s.conv[q] + s.uval[q]);
            }
            if want {
                for ((b, jv), uv) in block.iter_mut().zip(&s.jac).zip(&s.ujac) {
                    *b = -h * (jv + uv);
                }
                for q in 0..d {
                    block[q * d + q] += 1.0;
                }
            }
            let floor = 8.0 * f64::EPSILON * sqrt_n * (norm(xi) + norm(yi) + h * (mag + norm(&s.uval)));
            (norm(out), floor)
        })
        .collect();
    if let Some(b) = blocks {
        b.copy_from_slice(&jacs);
    }
    let (mut max, mut floor) = (0.0f64, 0.0f64);
    for (r, fl) in stats {
        if !r.is_finite() {
            return Err(Error::NonFinite("implicit stage residual".into()));
        }
        max = max.max(r);
        floor = floor.max(fl);
    }
    Ok(Residual { phi, max, floor })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn apply_blocks(blocks: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for (chunk, jac) in out.chunks_mut(d).zip(blocks.chunks(d * d)) {
        // a singular block leaves its chunk unpreconditioned
        solve_small(jac, chunk);
    }
    out
}

/// Restarted right-preconditioned GMRES for `J s = rhs`, with `J v`
/// supplied by `matvec`. Stops at relative residual `eta`.
fn gmres(
    matvec: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    precond: &dyn Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    eta: f64,
) -> Result<Vec<f64>> {
    let len = rhs.len();
    let bnorm = dot(rhs, rhs).sqrt();
    let mut sol = vec![0.0; len];
    if bnorm == 0.0 {
        return Ok(sol);
    }
    let mut used = 0;
    let mut r = rhs.to_vec();
    while used < GMRES_MAX {
        let beta = dot(&r, &r).sqrt();
        if beta <= eta * bnorm {
            break;
        }
        let m = GMRES_RESTART.min(GMRES_MAX - used);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m {
            let mut w = matvec(&precond(&basis[k]))?;
            used += 1;
            for (j, b) in basis.iter().enumerate() {
                let hj = dot(&w, b);
                hess[j][k] = hj;
                w.iter_mut().zip(b).for_each(|(wv, bv)| *wv -= hj * bv);
            }
            let wn = dot(&w, &w).sqrt();
            hess[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let den = hess[k][k].hypot(hess[k + 1][k]);
            if den == 0.0 {
                break;
            }
            cs[k] = hess[k][k] / den;
            sn[k] = hess[k + 1][k] / den;
            hess[k][k] = den;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            if g[k].abs() <= eta * bnorm || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        // back substitution
        let mut coef = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| hess[i][j] * coef[j]).sum();
            coef[i] = (g[i] - s) / hess[i][i];
        }
        let mut z = vec![0.0; len];
        for (c, b) in coef.iter().zip(&basis) {
            z.iter_mut().zip(b).for_each(|(zv, bv)| *zv += c * bv);
        }
        let dz = precond(&z);
        sol.iter_mut().zip(&dz).for_each(|(s, v)| *s += v);
        let js = matvec(&sol)?;
        used += 1;
        r = rhs.iter().zip(&js).map(|(b, v)| b - v).collect();
        if k == 0 {
            break;
        }
    }
    Ok(sol)
}

#[allow(clippy::too_many_arguments)]
fn newton_krylov(
    model: &Model,
    x: &ParticleState,
    mut y: Vec<f64>,
    t: f64,
    h: f64,
    base: f64,
    max_iter: usize,
    offset: usize,
) -> Result<StageState> {
    let (n, d) = (x.n(), x.dim());
    let mut blocks = vec![0.0; n * d * d];
    let mut res = full_residual(model, x, &y, t, h, Some(&mut blocks))?;
    for it in 1..=max_iter {
        let threshold = base + res.floor;
        if res.max <= threshold {
            let y = ParticleState::new(n, d, y)?.at(x.time, x.step);
            return Ok(StageState { y, residual_norm: res.max, iterations: offset + it, threshold });
        }
        let phi_norm = dot(&res.phi, &res.phi).sqrt();
        let y_norm = dot(&y, &y).sqrt();
        let mut matvec = |v: &[f64]| -> Result<Vec<f64>> {
            let vn = dot(v, v).sqrt();
            if vn == 0.0 {
                return Ok(vec![0.0; v.len()]);
            }
            let eps = f64::EPSILON.sqrt() * (1.0 + y_norm) / vn;
            let shifted: Vec<f64> = y.iter().zip(v).map(|(a, b)| a + eps * b).collect();
            let r = full_residual(model, x, &shifted, t, h, None)?;
            Ok(r.phi.iter().zip(&res.phi).map(|(a, b)| (a - b) / eps).collect())
        };
        let precond = |v: &[f64]| apply_blocks(&blocks, d, v);
        let rhs: Vec<f64> = res.phi.iter().map(|v| -v).collect();
        let step = gmres(&mut matvec, &precond, &rhs, 1e-3)?;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = y.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
            if let Ok(r) = full_residual(model, x, &trial, t, h, None) {
                if dot(&r.phi, &r.phi).sqrt() <= (1.0 - 1e-4 * lambda) * phi_norm {
                    accepted = Some(trial);
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some(next) = accepted else {
            return Err(Error::NonConvergence { residual: res.max, iterations: offset + it });
        };
        y = next;
        res = full_residual(model, x, &y, t, h, Some(&mut blocks))?;
    }
    Err(Error::NonConvergence { residual: res.max, iterations: offset + max_iter })
}

/// `max_i |Y_i - X_i - h V_i(Y)|`, evaluated independently of the solver.
pub fn stage_residual(model: &Model, x: &ParticleState, y: &ParticleState, t: f64, h: f64) -> Result<f64> {
    let conv = crate::measure::convolve_all(model.f(), y)?;
    let mu = MeasureSummary::of(y);
    let d = x.dim();
    let mut u = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for i in 0..x.n() {
        model.u().eval(t, y.row(i), &mu, &mut u);
        let r: Vec<f64> = (0..d).map(|q| y.row(i)[q] - x.row(i)[q] - h * (conv[i * d + q] + u[q])).collect();
        worst = worst.max(norm(&r));
    }
    Ok(worst)
}
