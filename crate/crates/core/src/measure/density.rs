use std::io::Write;

use serde::Serialize;

use super::ParticleState;
use crate::error::{Error, Result};

/// Normalised histogram along one axis. `mass`, `underflow` and `overflow`
/// sum to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityTable {
    pub axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
    pub underflow: f64,
    pub overflow: f64,
}

impl DensityTable {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.mass.len() as f64
    }

    pub fn edges(&self, k: usize) -> (f64, f64) {
        let w = self.width();
        let right = if k + 1 == self.mass.len() { self.hi } else { self.lo + (k + 1) as f64 * w };
        (self.lo + k as f64 * w, right)
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum::<f64>() + self.underflow + self.overflow
    }

    /// CSV with header `bin_left,bin_right,mass`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_left,bin_right,mass")?;
        for (k, m) in self.mass.iter().enumerate() {
            let (a, b) = self.edges(k);
            writeln!(w, "{a},{b},{m}")?;
        }
        Ok(())
    }
}

/// Histogram of coordinate `axis` over `range = (lo, hi)`. Samples equal to
/// `hi` land in the last bin; anything outside goes to under/overflow.
pub fn histogram_density(state: &ParticleState, axis: usize, bins: usize, range: (f64, f64)) -> Result<DensityTable> {
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidArgument(format!("empty histogram range [{lo}, {hi}]")));
    }
    if axis >= state.dim() {
        return Err(Error::DimensionMismatch(format!("axis {axis} of a {}-d state", state.dim())));
    }
    let mut counts = vec![0usize; bins];
    let (mut under, mut over) = (0usize, 0usize);
    let scale = bins as f64 / (hi - lo);
    for r in state.rows() {
        let x = r[axis];
        if x < lo {
            under += 1;
        } else if x > hi || x.is_nan() {
            over += 1;
        } else {
            let k = (((x - lo) * scale) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let n = state.n() as f64;
    Ok(DensityTable {
        axis,
        lo,
        hi,
        mass: counts.into_iter().map(|c| c as f64 / n).collect(),
        underflow: under as f64 / n,
        overflow: over as f64 / n,
    })
}

/// Histogram over `mean +- 4 std` of the chosen axis.
pub fn histogram_density_auto(state: &ParticleState, axis: usize, bins: usize) -> Result<DensityTable> {
    if axis >= state.dim() {
        return Err(Error::DimensionMismatch(format!("axis {axis} of a {}-d state", state.dim())));
    }
    let col = state.column(axis);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let half = if var > 0.0 { 4.0 * var.sqrt() } else { 1.0 };
    histogram_density(state, axis, bins, (mean - half, mean + half))
}
