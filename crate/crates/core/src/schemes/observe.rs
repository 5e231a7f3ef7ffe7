use serde::Serialize;

use crate::error::Result;
use crate::measure::{empirical_moment, ParticleState};

/// Called by [`super::simulate`] on the initial state and after every step.
pub trait Observer {
    fn observe(&mut self, state: &ParticleState) -> Result<()>;
}

/// Wraps a closure.
pub struct FnObserver<F>(pub F);

impl<F: FnMut(&ParticleState) -> Result<()>> Observer for FnObserver<F> {
    fn observe(&mut self, state: &ParticleState) -> Result<()> {
        (self.0)(state)
    }
}

/// Copies of the state at chosen step indices.
#[derive(Debug, Clone, Default)]
pub struct SnapshotObserver {
    pub steps: Vec<usize>,
    pub snapshots: Vec<ParticleState>,
}

impl SnapshotObserver {
    pub fn at_steps(mut steps: Vec<usize>) -> Self {
        steps.sort_unstable();
        steps.dedup();
        Self { steps, snapshots: Vec::new() }
    }

    pub fn get(&self, step: usize) -> Option<&ParticleState> {
        self.snapshots.iter().find(|s| s.step == step)
    }
}

impl Observer for SnapshotObserver {
    fn observe(&mut self, state: &ParticleState) -> Result<()> {
        if self.steps.binary_search(&state.step).is_ok() {
            self.snapshots.push(state.clone());
        }
        Ok(())
    }
}

/// Empirical `E|X|^p` every `every` steps.
#[derive(Debug, Clone)]
pub struct MomentObserver {
    pub every: usize,
    pub ps: Vec<f64>,
    pub times: Vec<f64>,
    /// One row per recorded time, one column per `p`.
    pub values: Vec<Vec<f64>>,
}

impl MomentObserver {
    pub fn new(every: usize, ps: Vec<f64>) -> Self {
        Self { every: every.max(1), ps, times: Vec::new(), values: Vec::new() }
    }
}

impl Observer for MomentObserver {
    fn observe(&mut self, state: &ParticleState) -> Result<()> {
        if state.step.is_multiple_of(self.every) {
            self.times.push(state.time);
            self.values.push(self.ps.iter().map(|&p| empirical_moment(state, p)).collect::<Result<_>>()?);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackRow {
    pub time: f64,
    pub mean: Vec<f64>,
    /// Rows of the tracked particles, concatenated.
    pub particles: Vec<f64>,
}

/// Empirical mean and a few particle paths every `every` steps.
#[derive(Debug, Clone)]
pub struct MeanTrack {
    pub every: usize,
    pub tracked: Vec<usize>,
    pub rows: Vec<TrackRow>,
}

impl MeanTrack {
    pub fn new(every: usize, tracked: Vec<usize>) -> Self {
        Self { every: every.max(1), tracked, rows: Vec::new() }
    }
}

impl Observer for MeanTrack {
    fn observe(&mut self, state: &ParticleState) -> Result<()> {
        if !state.step.is_multiple_of(self.every) {
            return Ok(());
        }
        let d = state.dim();
        let mut mean = vec![0.0; d];
        for row in state.rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= state.n() as f64);
        let particles = self.tracked.iter().filter(|&&i| i < state.n()).flat_map(|&i| state.row(i).to_vec()).collect();
        self.rows.push(TrackRow { time: state.time, mean, particles });
        Ok(())
    }
}
