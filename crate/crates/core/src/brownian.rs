//! Seeded Brownian increments on a fine grid.
//!
//! Draw `(i, k, c)` (particle, fine step, component) is a pure function of
//! the seed: particle `i` owns ChaCha stream `i` and the draw sits at a fixed
//! word offset in it. Coarser stepsizes sum consecutive fine draws, so runs at
//! different `h` and different `N` see the same paths.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};

/// `Phi^{-1}(u)` for `u` in `(0, 1)`.
#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Uniform in the open interval `(0, 1)` from 52 random bits (the half-step
/// offset keeps both ends representable).
#[inline]
pub(crate) fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// `n = r * d` with `r` a positive integer, to within one ulp of `r`.
pub fn integer_ratio(n: f64, d: f64) -> Option<usize> {
    let q = n / d;
    let r = q.round();
    if r >= 1.0 && (q - r).abs() <= spacing(r) {
        Some(r as usize)
    } else {
        None
    }
}

fn spacing(x: f64) -> f64 {
    f64::from_bits(x.abs().to_bits() + 1) - x.abs()
}

/// Identity of a lattice apart from its particle count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub seed: u64,
    pub l: usize,
    pub h_fine: f64,
    pub m_fine: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianLattice {
    seed: u64,
    n: usize,
    l: usize,
    h_fine: f64,
    m_fine: usize,
}

impl BrownianLattice {
    /// Lattice covering `[0, t_end]` with `t_end / h_fine` fine steps.
    pub fn new(seed: u64, n: usize, l: usize, h_fine: f64, t_end: f64) -> Result<Self> {
        if n == 0 || l == 0 {
            return Err(Error::InvalidArgument("lattice needs N >= 1 and l >= 1".into()));
        }
        if !(h_fine > 0.0) || !h_fine.is_finite() {
            return Err(Error::InvalidArgument(format!("fine stepsize {h_fine} must be positive")));
        }
        let m_fine = if t_end == 0.0 {
            0
        } else {
            integer_ratio(t_end, h_fine).ok_or(Error::NonCommensurate { h: t_end, h_fine })?
        };
        Ok(Self { seed, n, l, h_fine, m_fine })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn noise_dim(&self) -> usize {
        self.l
    }

    pub fn h_fine(&self) -> f64 {
        self.h_fine
    }

    pub fn m_fine(&self) -> usize {
        self.m_fine
    }

    pub fn t_end(&self) -> f64 {
        self.m_fine as f64 * self.h_fine
    }

    pub fn lineage(&self) -> Lineage {
        Lineage { seed: self.seed, l: self.l, h_fine: self.h_fine, m_fine: self.m_fine }
    }

    /// Fine steps per coarse step of size `h`.
    pub fn ratio(&self, h: f64) -> Result<usize> {
        integer_ratio(h, self.h_fine).ok_or(Error::NonCommensurate { h, h_fine: self.h_fine })
    }

    fn stream(&self, i: usize, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        // two 32-bit words per draw
        rng.set_word_pos(2 * (k as u128) * self.l as u128);
        rng
    }

    #[inline]
    fn draw(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
        sd * standard_normal_quantile(open_unit(rng.next_u64()))
    }

    fn check_range(&self, i: usize, k_end: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::InvalidArgument(format!("particle {i} outside lattice of {}", self.n)));
        }
        if k_end > self.m_fine {
            return Err(Error::InvalidArgument(format!(
                "fine step {k_end} beyond the lattice horizon of {} steps",
                self.m_fine
            )));
        }
        Ok(())
    }

    /// Fine increment `(i, k)`, variance `h_fine` per component.
    pub fn fine_increment(&self, i: usize, k: usize) -> Result<Vec<f64>> {
        self.check_range(i, k + 1)?;
        let mut rng = self.stream(i, k);
        let sd = self.h_fine.sqrt();
        Ok((0..self.l).map(|_| Self::draw(&mut rng, sd)).collect())
    }

    fn coarse_into(&self, i: usize, k0: usize, ratio: usize, out: &mut [f64]) {
        let mut rng = self.stream(i, k0);
        let sd = self.h_fine.sqrt();
        out.fill(0.0);
        for _ in 0..ratio {
            for o in out.iter_mut() {
                *o += Self::draw(&mut rng, sd);
            }
        }
    }

    /// Increment of particle `i` over `[n h, (n + 1) h)`: the fine draws it
    /// covers, summed in ascending order.
    pub fn coarse_increment(&self, i: usize, n: usize, h: f64) -> Result<Vec<f64>> {
        let r = self.ratio(h)?;
        self.check_range(i, (n + 1) * r)?;
        let mut out = vec![0.0; self.l];
        self.coarse_into(i, n * r, r, &mut out);
        Ok(out)
    }

    /// All particles' increments for coarse step `n` of `ratio` fine steps,
    /// row-major `N x l`.
    pub fn fill_step(&self, n: usize, ratio: usize, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n * self.l {
            return Err(Error::SizeMismatch { left: out.len(), right: self.n * self.l });
        }
        self.check_range(0, (n + 1) * ratio)?;
        out.par_chunks_mut(self.l).enumerate().for_each(|(i, o)| self.coarse_into(i, n * ratio, ratio, o));
        Ok(())
    }

    /// Same lattice with more particles; existing streams are untouched.
    pub fn extend_particles(&self, n_new: usize) -> Result<Self> {
        if n_new < self.n {
            return Err(Error::ShrinkNotAllowed { from: self.n, to: n_new });
        }
        Ok(Self { n: n_new, ..self.clone() })
    }

    /// Whether `self` is `other` restricted to its first `self.n()` particles.
    pub fn is_prefix_of(&self, other: &Self) -> bool {
        self.lineage() == other.lineage() && self.n <= other.n
    }
}
