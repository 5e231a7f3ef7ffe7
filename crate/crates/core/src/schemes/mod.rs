//! One-step integrators for the particle system and the driver that runs
//! them over a Brownian lattice.

mod observe;
mod solver;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use observe::{FnObserver, MeanTrack, MomentObserver, Observer, SnapshotObserver, TrackRow};
pub use solver::{solve_implicit_stage, stage_residual, SolverConfig, StageState};

use crate::brownian::{integer_ratio, BrownianLattice};
use crate::error::{Error, Result};
use crate::measure::{convolve_all_mapped, norm, MeasureSummary, PairMap, ParticleState};
use crate::model::{stepsize_bound, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    Ssm,
    TamingIn,
    TamingOut,
    Euler,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [SchemeKind::Ssm, SchemeKind::TamingIn, SchemeKind::TamingOut, SchemeKind::Euler];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Ssm => "ssm",
            SchemeKind::TamingIn => "taming-in",
            SchemeKind::TamingOut => "taming-out",
            SchemeKind::Euler => "euler",
        }
    }

    /// File-name friendly form.
    pub fn slug(self) -> &'static str {
        match self {
            SchemeKind::Ssm => "ssm",
            SchemeKind::TamingIn => "taming_in",
            SchemeKind::TamingOut => "taming_out",
            SchemeKind::Euler => "euler",
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeKind::ALL.into_iter().find(|k| k.name() == s || k.slug() == s).ok_or_else(|| Error::Parse {
            input: s.into(),
            reason: "expected ssm, taming-in, taming-out or euler".into(),
        })
    }
}

/// Which piece of the interaction a taming scheme damps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Taming {
    /// The kernel values inside the empirical average.
    In,
    /// The empirical average itself.
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub h: f64,
    pub t_end: f64,
    /// Taming exponent in `(0, 1]`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_true")]
    pub enforce_h_constraint: bool,
}

fn default_alpha() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, h: f64, t_end: f64) -> Self {
        Self { kind, h, t_end, alpha: default_alpha(), solver: SolverConfig::default(), enforce_h_constraint: true }
    }

    pub fn without_h_constraint(mut self) -> Self {
        self.enforce_h_constraint = false;
        self
    }

    /// Number of steps `M` with `M h = T`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidArgument(format!("stepsize h = {} must be positive", self.h)));
        }
        if self.t_end == 0.0 {
            return Ok(0);
        }
        integer_ratio(self.t_end, self.h).ok_or_else(|| {
            Error::InvalidArgument(format!("horizon T = {} is not a multiple of h = {}", self.t_end, self.h))
        })
    }

    /// `M^alpha`, the taming scale.
    pub fn taming_scale(&self) -> Result<f64> {
        Ok((self.steps()?.max(1) as f64).powf(self.alpha))
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        self.steps()?;
        self.solver.validate()?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!("taming exponent alpha = {} must lie in (0, 1]", self.alpha)));
        }
        if self.kind == SchemeKind::Ssm && self.enforce_h_constraint {
            let bound = stepsize_bound(&model.constants)?;
            if !(self.h < bound) {
                return Err(Error::StepsizeConstraint { h: self.h, bound, zeta: model.zeta()? });
            }
        }
        Ok(())
    }
}

/// `v -> v / (1 + scale |v|)` with the Euclidean (Frobenius) norm.
pub fn tame(values: &mut [f64], scale: f64) {
    let mag = norm(values);
    if mag > 0.0 {
        let k = 1.0 / (1.0 + scale * mag);
        values.iter_mut().for_each(|v| *v *= k);
    }
}

fn check_finite(state: &ParticleState, what: &str) -> Result<()> {
    if state.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn check_increments(model: &Model, x: &ParticleState, dw: &[f64]) -> Result<()> {
    if x.dim() != model.dim() {
        return Err(Error::DimensionMismatch(format!("state d = {}, model d = {}", x.dim(), model.dim())));
    }
    if dw.len() != x.n() * model.noise_dim() {
        return Err(Error::SizeMismatch { left: dw.len(), right: x.n() * model.noise_dim() });
    }
    Ok(())
}

/// `base_i + h (drift_i + b(t, at_i)) + (sigma(t, at_i) + fs_i) dW_i`, with
/// `b` and `sigma` seeing the empirical measure of `at`.
#[allow(clippy::too_many_arguments)]
fn advance(
    model: &Model,
    base: &ParticleState,
    at: &ParticleState,
    drift: Option<&[f64]>,
    fs_conv: Option<&[f64]>,
    t: f64,
    h: f64,
    dw: &[f64],
) -> Result<ParticleState> {
    let (n, d, l) = (base.n(), base.dim(), model.noise_dim());
    let mu = if model.needs_summary() { MeasureSummary::of(at) } else { MeasureSummary::dirac(&vec![0.0; d]) };
    let mut out = vec![0.0; n * d];
    out.par_chunks_mut(d).enumerate().for_each_init(
        || (vec![0.0; d], vec![0.0; d * l]),
        |(bv, sv), (i, o)| {
            let y = at.row(i);
            model.b().eval(t, y, &mu, bv);
            model.sigma().eval(t, y, &mu, sv);
            if let Some(fs) = fs_conv {
                for (s, c) in sv.iter_mut().zip(&fs[i * d * l..(i + 1) * d * l]) {
                    *s += c;
                }
            }
            let w = &dw[i * l..(i + 1) * l];
            let xb = base.row(i);
            for q in 0..d {
                let extra = drift.map_or(0.0, |v| v[i * d + q]);
                let noise: f64 = sv[q * l..(q + 1) * l].iter().zip(w).map(|(s, w)| s * w).sum();
                o[q] = xb[q] + h * (extra + bv[q]) + noise;
            }
        },
    );
    let next = ParticleState::new(n, d, out)?.at(base.time + h, base.step + 1);
    check_finite(&next, "state after step")?;
    Ok(next)
}

fn fs_convolution(model: &Model, y: &ParticleState, map: PairMap) -> Result<Option<Vec<f64>>> {
    if model.f_sigma().is_zero() {
        Ok(None)
    } else {
        convolve_all_mapped(model.f_sigma(), y, map).map(Some)
    }
}

/// One split-step: implicit drift stage, then an explicit step from it.
pub fn ssm_step(
    model: &Model,
    x: &ParticleState,
    dw: &[f64],
    t: f64,
    h: f64,
    solver: &SolverConfig,
) -> Result<(ParticleState, StageState)> {
    check_increments(model, x, dw)?;
    let stage = solve_implicit_stage(model, x, t, h, solver, None)?;
    check_finite(&stage.y, "implicit stage")?;
    let fs = fs_convolution(model, &stage.y, PairMap::Plain)?;
    let mut next = advance(model, &stage.y, &stage.y, None, fs.as_deref(), t, h, dw)?;
    next.time = x.time + h;
    next.step = x.step + 1;
    Ok((next, stage))
}

/// `v(x) = (f * mu)(x) + u(x, mu)` for every particle, optionally tamed.
fn explicit_drift(model: &Model, x: &ParticleState, t: f64, taming: Option<(Taming, f64)>) -> Result<Vec<f64>> {
    let d = x.dim();
    let map = match taming {
        Some((Taming::In, s)) => PairMap::Tamed(s),
        _ => PairMap::Plain,
    };
    let mut v = if model.f().is_zero() { vec![0.0; x.n() * d] } else { convolve_all_mapped(model.f(), x, map)? };
    if let Some((Taming::Out, s)) = taming {
        v.chunks_mut(d).for_each(|c| tame(c, s));
    }
    if !model.u().is_zero() {
        let mu = MeasureSummary::of(x);
        let mut u = vec![0.0; d];
        for (i, vi) in v.chunks_mut(d).enumerate() {
            model.u().eval(t, x.row(i), &mu, &mut u);
            if let Some((_, s)) = taming {
                tame(&mut u, s);
            }
            vi.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
        }
    }
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("drift".into()));
    }
    Ok(v)
}

/// Explicit Euler-Maruyama step with untamed coefficients.
pub fn euler_step(model: &Model, x: &ParticleState, dw: &[f64], t: f64, h: f64) -> Result<ParticleState> {
    check_increments(model, x, dw)?;
    let v = explicit_drift(model, x, t, None)?;
    let fs = fs_convolution(model, x, PairMap::Plain)?;
    advance(model, x, x, Some(&v), fs.as_deref(), t, h, dw)
}

/// Explicit step with the interaction and `u` tamed at scale `M^alpha`.
#[allow(clippy::too_many_arguments)]
pub fn taming_step(
    model: &Model,
    x: &ParticleState,
    dw: &[f64],
    t: f64,
    h: f64,
    alpha: f64,
    m_steps: usize,
    variant: Taming,
) -> Result<ParticleState> {
    check_increments(model, x, dw)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("taming exponent alpha = {alpha} must lie in (0, 1]")));
    }
    let scale = (m_steps.max(1) as f64).powf(alpha);
    let v = explicit_drift(model, x, t, Some((variant, scale)))?;
    let fs = match variant {
        Taming::In => fs_convolution(model, x, PairMap::Tamed(scale))?,
        Taming::Out => fs_convolution(model, x, PairMap::Plain)?.map(|mut c| {
            let w = model.dim() * model.noise_dim();
            c.chunks_mut(w).for_each(|row| tame(row, scale));
            c
        }),
    };
    advance(model, x, x, Some(&v), fs.as_deref(), t, h, dw)
}

/// Solver effort over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub steps: usize,
    pub total_sweeps: usize,
    pub max_sweeps: usize,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub final_state: ParticleState,
    pub stats: RunStats,
}

/// Advances a particle system one step at a time against a lattice. Two
/// steppers sharing a lattice see the same increments, which is how coupled
/// systems are driven.
pub struct Stepper<'a> {
    model: &'a Model,
    cfg: &'a SchemeConfig,
    lattice: &'a BrownianLattice,
    m: usize,
    ratio: usize,
    dw: Vec<f64>,
    pub stats: RunStats,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a Model, cfg: &'a SchemeConfig, lattice: &'a BrownianLattice, n: usize) -> Result<Self> {
        cfg.validate(model)?;
        if n != lattice.n() {
            return Err(Error::SizeMismatch { left: n, right: lattice.n() });
        }
        if lattice.noise_dim() != model.noise_dim() {
            return Err(Error::DimensionMismatch(format!(
                "lattice l = {}, model l = {}",
                lattice.noise_dim(),
                model.noise_dim()
            )));
        }
        let m = cfg.steps()?;
        let ratio = if m == 0 { 1 } else { lattice.ratio(cfg.h)? };
        if m * ratio > lattice.m_fine() {
            return Err(Error::InvalidArgument(format!(
                "lattice covers {} fine steps, run needs {}",
                lattice.m_fine(),
                m * ratio
            )));
        }
        Ok(Self { model, cfg, lattice, m, ratio, dw: vec![0.0; n * model.noise_dim()], stats: RunStats::default() })
    }

    pub fn steps(&self) -> usize {
        self.m
    }

    /// Step `x.step -> x.step + 1`; failures come back as [`Error::Step`].
    pub fn step(&mut self, x: &ParticleState) -> Result<ParticleState> {
        let (n, h) = (x.step, self.cfg.h);
        let t = n as f64 * h;
        let wrap = |e: Error| Error::Step { step: n, time: t, source: Box::new(e) };
        if n >= self.m {
            return Err(wrap(Error::InvalidArgument(format!("run has only {} steps", self.m))));
        }
        self.lattice.fill_step(n, self.ratio, &mut self.dw).map_err(wrap)?;
        let (model, dw) = (self.model, &self.dw);
        let next = match self.cfg.kind {
            SchemeKind::Ssm => {
                let (next, stage) = ssm_step(model, x, dw, t, h, &self.cfg.solver).map_err(wrap)?;
                self.stats.total_sweeps += stage.iterations;
                self.stats.max_sweeps = self.stats.max_sweeps.max(stage.iterations);
                next
            }
            SchemeKind::Euler => euler_step(model, x, dw, t, h).map_err(wrap)?,
            SchemeKind::TamingIn => {
                taming_step(model, x, dw, t, h, self.cfg.alpha, self.m, Taming::In).map_err(wrap)?
            }
            SchemeKind::TamingOut => {
                taming_step(model, x, dw, t, h, self.cfg.alpha, self.m, Taming::Out).map_err(wrap)?
            }
        };
        self.stats.steps = n + 1;
        Ok(next.at((n + 1) as f64 * h, n + 1))
    }
}

/// Runs `cfg` from `x0` with increments from `lattice`, calling every
/// observer on the initial state and after each step. Step failures come
/// back as [`Error::Step`].
pub fn simulate(
    model: &Model,
    cfg: &SchemeConfig,
    lattice: &BrownianLattice,
    x0: &ParticleState,
    observers: &mut [&mut dyn Observer],
) -> Result<Trajectory> {
    let mut stepper = Stepper::new(model, cfg, lattice, x0.n())?;
    let mut x = x0.clone().at(0.0, 0);
    check_finite(&x, "initial state")?;
    for o in observers.iter_mut() {
        o.observe(&x)?;
    }
    for n in 0..stepper.steps() {
        x = stepper.step(&x)?;
        for o in observers.iter_mut() {
            o.observe(&x).map_err(|e| Error::Step { step: n, time: x.time, source: Box::new(e) })?;
        }
    }
    Ok(Trajectory { final_state: x, stats: stepper.stats })
}
