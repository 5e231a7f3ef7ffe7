//! Runs an experiment into an in-memory set of artifacts, then writes them.
//! Cells run concurrently; files are produced by one collector afterwards,
//! so the bytes never depend on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use mvsde::analysis::{
    contraction_run, moment_trace, path_error, poc_error, rmse, rmse_between, ErrorCurve, Metric, PathRecord,
    RunOutcome,
};
use mvsde::brownian::{integer_ratio, BrownianLattice};
use mvsde::measure::histogram_density_auto;
use mvsde::model::verify::{verify_model, SampleDomain, DEFAULT_TOLERANCE};
use mvsde::schemes::{simulate, MeanTrack, MomentObserver, Observer, SchemeKind, SnapshotObserver};
use mvsde::{Model, ParticleState};

use crate::config::{ExperimentConfig, ExperimentKind, SchemeEntry};
use crate::error::{CliError, Result};

/// Everything one experiment produces, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub files: BTreeMap<String, Vec<u8>>,
    pub summary: Value,
}

impl Report {
    pub fn text(&self, name: &str) -> Option<&str> {
        self.files.get(name).and_then(|b| std::str::from_utf8(b).ok())
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Where a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub step: usize,
    pub time: f64,
    pub error: String,
}

struct Cell<T> {
    final_state: Option<ParticleState>,
    failure: Option<Failure>,
    observed: T,
}

/// Runs one simulation; a failing step is a result, anything else an error.
fn run_cell<T>(
    model: &Model,
    entry: &SchemeEntry,
    h: f64,
    t_end: f64,
    lattice: &BrownianLattice,
    x0: &ParticleState,
    mut observer: T,
) -> Result<Cell<T>>
where
    T: Observer,
{
    let cfg = entry.scheme(h, t_end);
    match simulate(model, &cfg, lattice, x0, &mut [&mut observer]) {
        Ok(tr) => Ok(Cell { final_state: Some(tr.final_state), failure: None, observed: observer }),
        Err(mvsde::Error::Step { step, time, source }) => Ok(Cell {
            final_state: None,
            failure: Some(Failure { step, time, error: source.root().to_string() }),
            observed: observer,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Records every state on a set of steps.
struct PathObserver(SnapshotObserver);

impl Observer for PathObserver {
    fn observe(&mut self, state: &ParticleState) -> mvsde::Result<()> {
        self.0.observe(state)
    }
}

struct Noop;

impl Observer for Noop {
    fn observe(&mut self, _: &ParticleState) -> mvsde::Result<()> {
        Ok(())
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Vec<u8> {
    let mut s = String::new();
    s.push_str(header);
    s.push('\n');
    for row in rows {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            write!(s, "{v}").unwrap();
        }
        s.push('\n');
    }
    s.into_bytes()
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("artifacts serialise");
    b.push(b'\n');
    b
}

fn curve_files(
    files: &mut BTreeMap<String, Vec<u8>>,
    stem: &str,
    curve: &ErrorCurve,
    cfg: &ExperimentConfig,
    scheme: SchemeKind,
) {
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).expect("in-memory write");
    files.insert(format!("{stem}.csv"), buf);
    files.insert(format!("{stem}.json"), json_bytes(&curve.sidecar(&cfg.model.name, scheme.name(), cfg.seed)));
}

fn fitted(mut curve: ErrorCurve) -> ErrorCurve {
    // too few finished points leaves the slope empty, which the summary shows
    let _ = curve.fit();
    curve
}

fn curve_summary(curve: &ErrorCurve) -> Value {
    json!({
        "slope": curve.slope,
        "r_squared": curve.r_squared,
        "abscissa": curve.abscissa,
        "errors": curve.errors,
        "excluded": curve.excluded,
    })
}

/// Resolves, validates and runs `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let model = cfg.validate()?;
    let mut files = BTreeMap::new();
    let verify = verify_model(&model, &SampleDomain::default(), DEFAULT_TOLERANCE)?;
    files.insert("verify.json".to_string(), json_bytes(&verify));
    files.insert("manifest.toml".to_string(), manifest(cfg).into_bytes());
    let mut summary = match cfg.experiment {
        ExperimentKind::Rmse => run_rmse(cfg, &model, &mut files)?,
        ExperimentKind::Density => run_density(cfg, &model, &mut files)?,
        ExperimentKind::Contraction => run_contraction(cfg, &model, &mut files)?,
        ExperimentKind::Phase => run_phase(cfg, &model, &mut files)?,
        ExperimentKind::Poc => run_poc(cfg, &model, &mut files)?,
    };
    summary["preset"] = json!(cfg.name);
    summary["experiment"] = json!(cfg.experiment);
    summary["model"] = json!(cfg.model.name);
    summary["seed"] = json!(cfg.seed);
    summary["verify"] = json!(verify.iter().map(|r| (r.check.clone(), r.passed)).collect::<BTreeMap<_, _>>());
    files.insert("summary.json".to_string(), json_bytes(&summary));
    Ok(Report { files, summary })
}

/// The resolved config, which re-runs the experiment on its own.
pub fn manifest(cfg: &ExperimentConfig) -> String {
    format!(
        "# mvsde {} resolved experiment; run with `mvsde run <this file>`\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()
    )
}

fn steps_of(t: f64, h: f64) -> usize {
    integer_ratio(t, h).expect("validated grid")
}

fn run_rmse(cfg: &ExperimentConfig, model: &Model, files: &mut BTreeMap<String, Vec<u8>>) -> Result<Value> {
    let n = cfg.n[0];
    let proxy_h = cfg.proxy_h.expect("validated");
    let lattice = BrownianLattice::new(cfg.seed, n, model.noise_dim(), cfg.lattice_step(), cfg.t_end)?;
    let x0 = cfg.x0.sample(cfg.seed, n, model.dim())?;
    let digest = x0.digest();
    // proxy nodes: every grid point of every h
    let nodes: BTreeSet<usize> = cfg
        .h
        .iter()
        .flat_map(|&h| {
            let stride = steps_of(h, proxy_h);
            (0..=steps_of(cfg.t_end, h)).map(move |k| k * stride)
        })
        .collect();

    struct Job<'a> {
        entry: &'a SchemeEntry,
        h: f64,
        proxy: bool,
    }
    let mut jobs = Vec::new();
    for entry in &cfg.schemes {
        jobs.push(Job { entry, h: proxy_h, proxy: true });
        for &h in &cfg.h {
            jobs.push(Job { entry, h, proxy: false });
        }
    }
    let cells: Vec<Cell<PathObserver>> = jobs
        .par_iter()
        .map(|j| {
            let steps =
                if j.proxy { nodes.iter().copied().collect() } else { (0..=steps_of(cfg.t_end, j.h)).collect() };
            run_cell(model, j.entry, j.h, cfg.t_end, &lattice, &x0, PathObserver(SnapshotObserver::at_steps(steps)))
        })
        .collect::<Result<_>>()?;

    let mut curves = serde_json::Map::new();
    let mut failures = Vec::new();
    let mut k = 0;
    for entry in &cfg.schemes {
        let slug = entry.kind.slug();
        let mut outcome = |cell: &Cell<PathObserver>, h: f64| {
            let out = RunOutcome {
                abscissa: h,
                lineage: lattice.lineage(),
                x0_digest: digest,
                state: cell.final_state.clone(),
            };
            let path = PathRecord {
                abscissa: h,
                lineage: lattice.lineage(),
                x0_digest: digest,
                states: if cell.final_state.is_some() { cell.observed.0.snapshots.clone() } else { Vec::new() },
            };
            if let Some(f) = &cell.failure {
                failures.push(json!({"scheme": entry.kind, "h": h, "step": f.step, "time": f.time, "error": f.error}));
            }
            (out, path)
        };
        let (proxy, proxy_path) = outcome(&cells[k], proxy_h);
        let runs: Vec<(RunOutcome, PathRecord)> =
            cfg.h.iter().enumerate().map(|(i, &h)| outcome(&cells[k + 1 + i], h)).collect();
        k += 1 + cfg.h.len();
        if let Some(state) = &proxy.state {
            let mut buf = Vec::new();
            state.write_checkpoint(&mut buf)?;
            files.insert(format!("proxy_{slug}.state"), buf);
        }
        let (rm, pa) = if proxy.state.is_some() {
            let outs: Vec<RunOutcome> = runs.iter().map(|r| r.0.clone()).collect();
            let paths: Vec<PathRecord> = runs.iter().map(|r| r.1.clone()).collect();
            (fitted(rmse(&outs, &proxy)?), fitted(path_error(&paths, &proxy_path)?))
        } else {
            (
                ErrorCurve::new(Metric::Rmse, vec![], cfg.h.clone())?,
                ErrorCurve::new(Metric::Path, vec![], cfg.h.clone())?,
            )
        };
        curve_files(files, &format!("rmse_{slug}"), &rm, cfg, entry.kind);
        curve_files(files, &format!("path_{slug}"), &pa, cfg, entry.kind);
        curves.insert(format!("rmse_{slug}"), curve_summary(&rm));
        curves.insert(format!("path_{slug}"), curve_summary(&pa));
        curves.insert(format!("proxy_{slug}_finished"), json!(proxy.state.is_some()));
    }
    Ok(json!({"n": n, "proxy_h": proxy_h, "curves": curves, "failures": failures}))
}

fn time_tag(t: f64) -> String {
    format!("{t}").replace('.', "p")
}

fn run_density(cfg: &ExperimentConfig, model: &Model, files: &mut BTreeMap<String, Vec<u8>>) -> Result<Value> {
    let (n, h) = (cfg.n[0], cfg.h[0]);
    let lattice = BrownianLattice::new(cfg.seed, n, model.noise_dim(), cfg.lattice_step(), cfg.t_end)?;
    let x0 = cfg.x0.sample(cfg.seed, n, model.dim())?;
    let snap_steps: Vec<usize> = cfg.observe.iter().map(|&t| steps_of(t, h)).collect();
    let ps = vec![2.0];

    struct Obs(SnapshotObserver, MomentObserver);
    impl Observer for Obs {
        fn observe(&mut self, s: &ParticleState) -> mvsde::Result<()> {
            self.0.observe(s)?;
            self.1.observe(s)
        }
    }
    let cells: Vec<Cell<Obs>> = cfg
        .schemes
        .par_iter()
        .map(|e| {
            let obs =
                Obs(SnapshotObserver::at_steps(snap_steps.clone()), MomentObserver::new(cfg.moment_every, ps.clone()));
            run_cell(model, e, h, cfg.t_end, &lattice, &x0, obs)
        })
        .collect::<Result<_>>()?;

    // Scored against a finer SSM run only when an explicit scheme survives.
    let survivors = cfg.schemes.iter().zip(&cells).any(|(e, c)| e.kind != SchemeKind::Ssm && c.final_state.is_some());
    let reference = match cfg.reference_h {
        Some(rh) if survivors => {
            let entry = cfg
                .schemes
                .iter()
                .find(|e| e.kind == SchemeKind::Ssm)
                .cloned()
                .unwrap_or_else(|| SchemeEntry::unconstrained(SchemeKind::Ssm));
            run_cell(model, &entry, rh, cfg.t_end, &lattice, &x0, Noop)?.final_state
        }
        _ => None,
    };

    let mut per_scheme = serde_json::Map::new();
    for (e, cell) in cfg.schemes.iter().zip(&cells) {
        let slug = e.kind.slug();
        for (t, &step) in cfg.observe.iter().zip(&snap_steps) {
            if let Some(s) = cell.observed.0.get(step) {
                for axis in 0..s.dim() {
                    let table = histogram_density_auto(s, axis, cfg.bins)?;
                    let mut buf = Vec::new();
                    table.write_csv(&mut buf).map_err(mvsde::Error::from)?;
                    let suffix = if s.dim() > 1 { format!("_x{}", axis + 1) } else { String::new() };
                    files.insert(format!("density_{slug}_t{}{suffix}.csv", time_tag(*t)), buf);
                }
            }
        }
        let mo = &cell.observed.1;
        let trace = moment_trace(&ps, &mo.times, &mo.values, cfg.moment_cap, cell.failure.as_ref().map(|f| f.time));
        let mut buf = Vec::new();
        trace.write_csv(&mut buf)?;
        files.insert(format!("moments_{slug}.csv"), buf);
        let error = match (&reference, &cell.final_state) {
            (Some(r), Some(s)) => Some(rmse_between(s, r)?),
            _ => None,
        };
        per_scheme.insert(
            e.kind.name().to_string(),
            json!({
                "completed": cell.final_state.is_some(),
                "failure": cell.failure,
                "blow_up": trace.blow_up,
                "max_second_moment": trace.values.iter().map(|r| r[0]).fold(0.0, f64::max),
                "error_vs_reference": error,
            }),
        );
    }
    Ok(
        json!({"n": n, "h": h, "t_end": cfg.t_end, "reference_h": reference.as_ref().and(cfg.reference_h), "schemes": per_scheme}),
    )
}

fn run_contraction(cfg: &ExperimentConfig, model: &Model, files: &mut BTreeMap<String, Vec<u8>>) -> Result<Value> {
    let (n, h) = (cfg.n[0], cfg.h[0]);
    let lattice = BrownianLattice::new(cfg.seed, n, model.noise_dim(), cfg.lattice_step(), cfg.t_end)?;
    let x0 = cfg.x0.sample(cfg.seed, n, model.dim())?;
    // a different seed keeps the two initial laws independent
    let z0 = cfg.z0.as_ref().expect("validated").sample(cfg.seed.wrapping_add(1), n, model.dim())?;
    let mut out = serde_json::Map::new();
    for e in &cfg.schemes {
        let scheme = e.scheme(h, cfg.t_end);
        let slug = e.kind.slug();
        match contraction_run(model, &scheme, &lattice, &x0, &z0, cfg.burn_in) {
            Ok(tr) => {
                let mut buf = Vec::new();
                tr.write_csv(&mut buf)?;
                files.insert(format!("contraction_{slug}.csv"), buf);
                out.insert(
                    e.kind.name().to_string(),
                    json!({
                        "beta_theoretical": tr.beta_theoretical,
                        "fitted_decay": tr.fitted_decay,
                        "mean_step_rate": tr.mean_step_rate(),
                        "non_monotone_fraction": tr.non_monotone_fraction(),
                        "burn_in": tr.burn_in,
                        "initial_msd": tr.msd[0],
                        "final_msd": tr.msd[tr.msd.len() - 1],
                    }),
                );
            }
            Err(mvsde::Error::Step { step, time, source }) => {
                out.insert(
                    e.kind.name().to_string(),
                    json!({"failure": Failure { step, time, error: source.root().to_string() }}),
                );
            }
            Err(other) => return Err(other.into()),
        }
    }
    Ok(json!({"n": n, "h": h, "t_end": cfg.t_end, "schemes": out}))
}

fn run_phase(cfg: &ExperimentConfig, model: &Model, files: &mut BTreeMap<String, Vec<u8>>) -> Result<Value> {
    let h = cfg.h[0];
    let d = model.dim();
    let jobs: Vec<(&SchemeEntry, usize)> =
        cfg.schemes.iter().flat_map(|e| cfg.n.iter().map(move |&n| (e, n))).collect();
    let cells: Vec<Cell<MeanTrack>> = jobs
        .par_iter()
        .map(|&(e, n)| {
            let lattice = BrownianLattice::new(cfg.seed, n, model.noise_dim(), cfg.lattice_step(), cfg.t_end)?;
            let x0 = cfg.x0.sample(cfg.seed, n, d)?;
            let tracked: Vec<usize> = (0..cfg.tracks.min(n)).collect();
            run_cell(model, e, h, cfg.t_end, &lattice, &x0, MeanTrack::new(1, tracked))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (&(e, n), cell) in jobs.iter().zip(&cells) {
        let mut header = String::from("time");
        for q in 1..=d {
            write!(header, ",mean_x{q}").unwrap();
        }
        for i in 0..cfg.tracks.min(n) {
            for q in 1..=d {
                write!(header, ",p{i}_x{q}").unwrap();
            }
        }
        let rows = cell.observed.rows.iter().map(|r| {
            let mut v = vec![r.time];
            v.extend(&r.mean);
            v.extend(&r.particles);
            v
        });
        files.insert(format!("track_{}_n{n}.csv", e.kind.slug()), csv(&header, rows));
        out.push(json!({
            "scheme": e.kind,
            "n": n,
            "rows": cell.observed.rows.len(),
            "completed": cell.final_state.is_some(),
            "failure": cell.failure,
        }));
    }
    Ok(json!({"h": h, "t_end": cfg.t_end, "cells": out}))
}

fn run_poc(cfg: &ExperimentConfig, model: &Model, files: &mut BTreeMap<String, Vec<u8>>) -> Result<Value> {
    let h = cfg.h[0];
    let top = cfg.proxy_n.expect("validated");
    let mut levels = cfg.n.clone();
    levels.push(top);
    let mut curves = serde_json::Map::new();
    let mut failures = Vec::new();
    for e in &cfg.schemes {
        let lattices: Vec<BrownianLattice> = levels
            .iter()
            .map(|&n| BrownianLattice::new(cfg.seed, n, model.noise_dim(), cfg.lattice_step(), cfg.t_end))
            .collect::<mvsde::Result<_>>()?;
        let cells: Vec<Cell<Noop>> = levels
            .par_iter()
            .zip(&lattices)
            .map(|(&n, lat)| {
                let x0 = cfg.x0.sample(cfg.seed, n, model.dim())?;
                run_cell(model, e, h, cfg.t_end, lat, &x0, Noop)
            })
            .collect::<Result<_>>()?;
        let mut points = Vec::new();
        let mut excluded = Vec::new();
        for i in 0..cfg.n.len() {
            match (&cells[i].final_state, &cells[i + 1].final_state) {
                (Some(a), Some(b)) => points.push((levels[i] as f64, poc_error(a, &lattices[i], b, &lattices[i + 1])?)),
                _ => excluded.push(levels[i] as f64),
            }
        }
        for (n, c) in levels.iter().zip(&cells) {
            if let Some(f) = &c.failure {
                failures.push(json!({"scheme": e.kind, "n": n, "step": f.step, "time": f.time, "error": f.error}));
            }
        }
        let curve = fitted(ErrorCurve::new(Metric::Poc, points, excluded)?);
        let slug = e.kind.slug();
        curve_files(files, &format!("poc_{slug}"), &curve, cfg, e.kind);
        curves.insert(format!("poc_{slug}"), curve_summary(&curve));
    }
    Ok(json!({"h": h, "d": model.dim(), "proxy_n": top, "curves": curves, "failures": failures}))
}
