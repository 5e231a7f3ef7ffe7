//! Fixtures shared by the benchmarks.

use mvsde::brownian::BrownianLattice;
use mvsde::init::InitialLaw;
use mvsde::{builtin_model, Model, ParticleState};

pub const SEED: u64 = 11;

pub fn double_well() -> Model {
    builtin_model("double-well", 1).expect("built-in model")
}

/// `n` particles from `N(3, 9)`, the start of the error experiments.
pub fn start(n: usize, d: usize) -> ParticleState {
    let law: InitialLaw = "normal(3, 9)".parse().expect("law parses");
    law.sample(SEED, n, d).expect("sampling")
}

/// Increments of the first step at stepsize `h`.
pub fn increments(n: usize, h: f64) -> Vec<f64> {
    let lattice = BrownianLattice::new(SEED, n, 1, h, h).expect("lattice");
    let mut dw = vec![0.0; n];
    lattice.fill_step(0, 1, &mut dw).expect("increments");
    dw
}
