//! Error estimators, rate fits, moment traces and contraction diagnostics.
//!
//! Expectations are empirical means over the particles of a single run.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::brownian::{BrownianLattice, Lineage};
use crate::error::{Error, Result};
use crate::measure::ParticleState;
use crate::model::{contraction_beta, Model};
use crate::schemes::{SchemeConfig, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Rmse,
    Path,
    Poc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub metric: Metric,
    pub abscissa: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    /// Abscissae left out because their run did not finish or overflowed.
    pub excluded: Vec<f64>,
}

impl ErrorCurve {
    /// Points are sorted by abscissa; duplicates are rejected.
    pub fn new(metric: Metric, mut points: Vec<(f64, f64)>, excluded: Vec<f64>) -> Result<Self> {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate abscissa in error curve".into()));
        }
        if points.iter().any(|p| !(p.1 >= 0.0)) {
            return Err(Error::InvalidArgument("errors must be nonnegative".into()));
        }
        let (abscissa, errors) = points.into_iter().unzip();
        Ok(Self { metric, abscissa, errors, slope: None, r_squared: None, excluded })
    }

    /// Fits the log-log rate and stores it on the curve.
    pub fn fit(&mut self) -> Result<(f64, f64)> {
        let (s, r2) = fit_rate(self)?;
        self.slope = Some(s);
        self.r_squared = Some(r2);
        Ok((s, r2))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "abscissa,error")?;
        for (a, e) in self.abscissa.iter().zip(&self.errors) {
            writeln!(w, "{a},{e}")?;
        }
        Ok(())
    }

    pub fn sidecar(&self, model: &str, scheme: &str, seed: u64) -> CurveSidecar {
        CurveSidecar {
            metric: self.metric,
            slope: self.slope,
            r_squared: self.r_squared,
            excluded_points: self.excluded.clone(),
            model: model.to_string(),
            scheme: scheme.to_string(),
            seed,
        }
    }
}

/// JSON written next to an error-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub metric: Metric,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub excluded_points: Vec<f64>,
    pub model: String,
    pub scheme: String,
    pub seed: u64,
}

/// Final state of one run with what is needed to pair it with others.
/// `state` is `None` when the run blew up.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub abscissa: f64,
    pub lineage: Lineage,
    /// Digest of the initial state.
    pub x0_digest: u64,
    pub state: Option<ParticleState>,
}

fn same_lineage(a: &RunOutcome, b: &RunOutcome) -> Result<()> {
    if a.lineage != b.lineage || a.x0_digest != b.x0_digest {
        return Err(Error::LineageMismatch(format!(
            "runs at {} and {} do not share noise and initial values",
            a.abscissa, b.abscissa
        )));
    }
    Ok(())
}

/// `sqrt((1/N) sum_j |a_j - b_j|^2)` with particle `j` paired to particle `j`.
pub fn rmse_between(a: &ParticleState, b: &ParticleState) -> Result<f64> {
    if a.n() != b.n() || a.dim() != b.dim() {
        return Err(Error::SizeMismatch { left: a.n() * a.dim(), right: b.n() * b.dim() });
    }
    let s: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((s / a.n() as f64).sqrt())
}

/// Root mean-square error of each run against the reference run.
pub fn rmse(runs: &[RunOutcome], proxy: &RunOutcome) -> Result<ErrorCurve> {
    let reference =
        proxy.state.as_ref().ok_or_else(|| Error::InvalidArgument("reference run did not finish".into()))?;
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for r in runs {
        same_lineage(r, proxy)?;
        match &r.state {
            Some(s) => match rmse_between(s, reference)? {
                e if e.is_finite() => points.push((r.abscissa, e)),
                _ => excluded.push(r.abscissa),
            },
            None => excluded.push(r.abscissa),
        }
    }
    ErrorCurve::new(Metric::Rmse, points, excluded)
}

/// Sampled path of one run.
#[derive(Debug, Clone)]
pub struct PathRecord {
    pub abscissa: f64,
    pub lineage: Lineage,
    pub x0_digest: u64,
    /// Increasing times with one state each; empty when the run blew up.
    pub states: Vec<ParticleState>,
}

fn time_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// `sqrt((1/N) sum_j max_n |X_n^j - Y_n^j|^2)` over the times both records share.
pub fn path_error_between(a: &[ParticleState], b: &[ParticleState]) -> Result<f64> {
    let first = a.first().ok_or_else(|| Error::InvalidArgument("empty path".into()))?;
    let (n, d) = (first.n(), first.dim());
    let mut sup = vec![0.0f64; n];
    let mut shared = 0;
    let mut k = 0;
    for s in a {
        while k < b.len() && b[k].time < s.time && !time_eq(b[k].time, s.time) {
            k += 1;
        }
        if k == b.len() {
            break;
        }
        if !time_eq(b[k].time, s.time) {
            continue;
        }
        let r = &b[k];
        if s.n() != n || r.n() != n || s.dim() != d || r.dim() != d {
            return Err(Error::SizeMismatch { left: s.n() * s.dim(), right: r.n() * r.dim() });
        }
        shared += 1;
        for (j, m) in sup.iter_mut().enumerate() {
            let e: f64 = s.row(j).iter().zip(r.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            *m = m.max(e);
        }
    }
    if shared == 0 {
        return Err(Error::InvalidArgument("paths share no grid points".into()));
    }
    Ok((sup.iter().sum::<f64>() / n as f64).sqrt())
}

/// Strong path error of each record, with the sup taken over the coarse grid.
pub fn path_error(runs: &[PathRecord], proxy: &PathRecord) -> Result<ErrorCurve> {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for r in runs {
        if r.lineage != proxy.lineage || r.x0_digest != proxy.x0_digest {
            return Err(Error::LineageMismatch(format!("path at {} is not coupled to the reference", r.abscissa)));
        }
        let e = if r.states.is_empty() { f64::NAN } else { path_error_between(&r.states, &proxy.states)? };
        if e.is_finite() {
            points.push((r.abscissa, e));
        } else {
            excluded.push(r.abscissa);
        }
    }
    ErrorCurve::new(Metric::Path, points, excluded)
}

/// Propagation-of-chaos error between an `N`-particle system and the first
/// `N` particles of a larger one driven by an extension of the same lattice.
pub fn poc_error(
    small: &ParticleState,
    small_lattice: &BrownianLattice,
    large: &ParticleState,
    large_lattice: &BrownianLattice,
) -> Result<f64> {
    if !small_lattice.is_prefix_of(large_lattice) || small.n() != small_lattice.n() || large.n() != large_lattice.n() {
        return Err(Error::CouplingViolation(format!(
            "systems of {} and {} particles do not share Brownian paths",
            small.n(),
            large.n()
        )));
    }
    rmse_between(small, &large.prefix(small.n())?)
}

/// Ordinary least squares of `log error` on `log abscissa`: `(slope, R^2)`.
pub fn fit_rate(curve: &ErrorCurve) -> Result<(f64, f64)> {
    let n = curve.abscissa.len();
    if n < 3 {
        return Err(Error::DegenerateFit(format!("{n} points, need at least 3")));
    }
    if curve.errors.iter().any(|e| !(*e > 0.0)) || curve.abscissa.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::DegenerateFit("log-log fit needs positive values".into()));
    }
    let xs: Vec<f64> = curve.abscissa.iter().map(|a| a.ln()).collect();
    let ys: Vec<f64> = curve.errors.iter().map(|e| e.ln()).collect();
    ols(&xs, &ys)
}

fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissa has no spread".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { (sxy * sxy / (sxx * syy)).min(1.0) } else { 1.0 };
    Ok((slope, r2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub times: Vec<f64>,
    /// `(1/N) sum_i |X_i - Z_i|^2` at every step.
    pub msd: Vec<f64>,
    pub beta_theoretical: f64,
    /// Slope of `log msd` against time after the burn-in.
    pub fitted_decay: f64,
    pub burn_in: f64,
}

impl ContractionTrace {
    fn tail(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().zip(&self.msd).map(|(t, m)| (*t, *m)).filter(move |(t, _)| *t >= self.burn_in)
    }

    /// Fraction of post-burn-in steps on which the distance grew.
    pub fn non_monotone_fraction(&self) -> f64 {
        let tail: Vec<f64> = self.tail().map(|p| p.1).collect();
        if tail.len() < 2 {
            return 0.0;
        }
        tail.windows(2).filter(|w| w[1] > w[0]).count() as f64 / (tail.len() - 1) as f64
    }

    /// `(1/h) log rho` for the geometric-mean per-step factor `rho` after
    /// the burn-in.
    pub fn mean_step_rate(&self) -> f64 {
        let tail: Vec<(f64, f64)> = self.tail().collect();
        match (tail.first(), tail.last()) {
            (Some(a), Some(b)) if b.0 > a.0 && a.1 > 0.0 && b.1 > 0.0 => (b.1 / a.1).ln() / (b.0 - a.0),
            _ => f64::NAN,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,msd")?;
        for (t, m) in self.times.iter().zip(&self.msd) {
            writeln!(w, "{t},{m}")?;
        }
        Ok(())
    }
}

/// Runs two systems from `x0` and `z0` on the same increments and records
/// their mean-square distance at every step.
pub fn contraction_run(
    model: &Model,
    scheme: &SchemeConfig,
    lattice: &BrownianLattice,
    x0: &ParticleState,
    z0: &ParticleState,
    burn_in: f64,
) -> Result<ContractionTrace> {
    if x0.n() != z0.n() || x0.dim() != z0.dim() {
        return Err(Error::SizeMismatch { left: x0.n() * x0.dim(), right: z0.n() * z0.dim() });
    }
    let beta_theoretical = contraction_beta(&model.constants, scheme.h)?;
    let mut sx = Stepper::new(model, scheme, lattice, x0.n())?;
    let mut sz = Stepper::new(model, scheme, lattice, z0.n())?;
    let mut x = x0.clone().at(0.0, 0);
    let mut z = z0.clone().at(0.0, 0);
    let mut times = vec![0.0];
    let mut msd = vec![rmse_between(&x, &z)?.powi(2)];
    for _ in 0..sx.steps() {
        x = sx.step(&x)?;
        z = sz.step(&z)?;
        times.push(x.time);
        msd.push(rmse_between(&x, &z)?.powi(2));
    }
    let (ts, ls): (Vec<f64>, Vec<f64>) =
        times.iter().zip(&msd).filter(|(t, m)| **t >= burn_in && **m > 0.0).map(|(t, m)| (*t, m.ln())).unzip();
    let fitted_decay = if ts.len() >= 3 { ols(&ts, &ls)?.0 } else { f64::NAN };
    Ok(ContractionTrace { times, msd, beta_theoretical, fitted_decay, burn_in })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTrace {
    pub ps: Vec<f64>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub cap: f64,
    /// First time a moment was non-finite or above the cap, or the time the
    /// run failed.
    pub blow_up: Option<f64>,
}

/// Wraps observed moments and flags blow-up. `failed_at` is the time at
/// which the run itself stopped, if it did.
pub fn moment_trace(ps: &[f64], times: &[f64], values: &[Vec<f64>], cap: f64, failed_at: Option<f64>) -> MomentTrace {
    let over =
        times.iter().zip(values).find(|(_, row)| row.iter().any(|v| !v.is_finite() || *v > cap)).map(|(t, _)| *t);
    let blow_up = match (over, failed_at) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
    MomentTrace { ps: ps.to_vec(), times: times.to_vec(), values: values.to_vec(), cap, blow_up }
}

impl MomentTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "time")?;
        for p in &self.ps {
            write!(w, ",m{p}")?;
        }
        writeln!(w)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{t}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
