//! Initial laws. Particle `i` draws from its own counter stream, so the first
//! `N` particles of a larger system start where an `N`-particle system does.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::brownian::{open_unit, standard_normal_quantile};
use crate::error::{Error, Result};
use crate::measure::ParticleState;

/// Keeps initial-value streams apart from the Brownian streams of the same seed.
const INIT_SALT: u64 = 0x1f1a15eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InitialLaw {
    /// `N(mean, var)` in every coordinate.
    Normal {
        mean: f64,
        var: f64,
    },
    Uniform {
        a: f64,
        b: f64,
    },
    /// Two-point law `B(c, p)`: `0` with probability `p`, `c` otherwise.
    Binomial {
        c: f64,
        p: f64,
    },
    /// Point mass.
    Constant(f64),
    /// One law per coordinate.
    Product(Vec<InitialLaw>),
}

impl InitialLaw {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            InitialLaw::Normal { var, .. } if !(*var >= 0.0) => bad(format!("variance {var} must be >= 0")),
            InitialLaw::Uniform { a, b } if !(a < b) => bad(format!("uniform({a}, {b}) is empty")),
            InitialLaw::Binomial { p, .. } if !(0.0..=1.0).contains(p) => bad(format!("binomial p = {p}")),
            InitialLaw::Product(v) if v.is_empty() => bad("empty product".into()),
            InitialLaw::Product(v) => v.iter().try_for_each(|l| {
                if matches!(l, InitialLaw::Product(_)) {
                    return bad("nested product".into());
                }
                l.validate()
            }),
            _ => Ok(()),
        }
    }

    /// Dimension this law forces, if any.
    pub fn dim(&self) -> Option<usize> {
        match self {
            InitialLaw::Product(v) => Some(v.len()),
            _ => None,
        }
    }

    fn draw_scalar(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            InitialLaw::Normal { mean, var } => mean + var.sqrt() * standard_normal_quantile(open_unit(rng.next_u64())),
            InitialLaw::Uniform { a, b } => a + (b - a) * open_unit(rng.next_u64()),
            InitialLaw::Binomial { c, p } => {
                if open_unit(rng.next_u64()) < *p {
                    0.0
                } else {
                    *c
                }
            }
            InitialLaw::Constant(x) => *x,
            InitialLaw::Product(_) => unreachable!("products are expanded per coordinate"),
        }
    }

    /// `n` particles in `R^d`.
    pub fn sample(&self, seed: u64, n: usize, d: usize) -> Result<ParticleState> {
        self.validate()?;
        if let Some(k) = self.dim() {
            if k != d {
                return Err(Error::DimensionMismatch(format!("initial law has {k} coordinates, model has d = {d}")));
            }
        }
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
            rng.set_stream(i as u64);
            for q in 0..d {
                let law = match self {
                    InitialLaw::Product(v) => &v[q],
                    other => other,
                };
                data.push(law.draw_scalar(&mut rng));
            }
        }
        ParticleState::new(n, d, data)
    }

    /// Exact mean and variance of one coordinate.
    pub fn moments(&self, q: usize) -> (f64, f64) {
        match self {
            InitialLaw::Normal { mean, var } => (*mean, *var),
            InitialLaw::Uniform { a, b } => (0.5 * (a + b), (b - a) * (b - a) / 12.0),
            InitialLaw::Binomial { c, p } => (c * (1.0 - p), c * c * p * (1.0 - p)),
            InitialLaw::Constant(x) => (*x, 0.0),
            InitialLaw::Product(v) => v[q].moments(0),
        }
    }
}

impl fmt::Display for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialLaw::Normal { mean, var } => write!(f, "normal({mean}, {var})"),
            InitialLaw::Uniform { a, b } => write!(f, "uniform({a}, {b})"),
            InitialLaw::Binomial { c, p } => write!(f, "binomial({c}, {p})"),
            InitialLaw::Constant(x) => write!(f, "const({x})"),
            InitialLaw::Product(v) => {
                write!(f, "product(")?;
                for (i, l) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{l}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn split_top_level(s: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(s[start..].trim());
    parts
}

impl FromStr for InitialLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse { input: s.to_string(), reason: reason.to_string() };
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| err("expected name(args)"))?;
        if !s.ends_with(')') {
            return Err(err("missing closing parenthesis"));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let inner = &s[open + 1..s.len() - 1];
        let args = split_top_level(inner);
        if name == "product" {
            let laws = args.iter().map(|a| a.parse()).collect::<Result<Vec<InitialLaw>>>()?;
            let law = InitialLaw::Product(laws);
            law.validate()?;
            return Ok(law);
        }
        let nums: Vec<f64> =
            args.iter().map(|a| a.parse::<f64>().map_err(|_| err("bad number"))).collect::<Result<_>>()?;
        let want = |k: usize| if nums.len() == k { Ok(()) } else { Err(err("wrong number of arguments")) };
        let law = match name.as_str() {
            "normal" | "n" => {
                want(2)?;
                InitialLaw::Normal { mean: nums[0], var: nums[1] }
            }
            "uniform" | "u" => {
                want(2)?;
                InitialLaw::Uniform { a: nums[0], b: nums[1] }
            }
            "binomial" | "b" => {
                want(2)?;
                InitialLaw::Binomial { c: nums[0], p: nums[1] }
            }
            "const" => {
                want(1)?;
                InitialLaw::Constant(nums[0])
            }
            _ => return Err(err("unknown law")),
        };
        law.validate()?;
        Ok(law)
    }
}

impl TryFrom<String> for InitialLaw {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InitialLaw> for String {
    fn from(l: InitialLaw) -> Self {
        l.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in ["normal(3, 9)", "uniform(-3, 3)", "binomial(50, 0.5)", "product(normal(2, 16), normal(0, 16))"] {
            let law: InitialLaw = s.parse().unwrap();
            assert_eq!(law.to_string(), s);
        }
        assert!("normal(1)".parse::<InitialLaw>().is_err());
        assert!("gamma(1, 2)".parse::<InitialLaw>().is_err());
        assert!("uniform(2, 1)".parse::<InitialLaw>().is_err());
    }

    #[test]
    fn empirical_moments_match() {
        for law in ["normal(2, 16)", "uniform(4, 12)", "binomial(50, 0.5)", "normal(2, 100)"] {
            let law: InitialLaw = law.parse().unwrap();
            let s = law.sample(17, 20_000, 1).unwrap();
            let xs = s.as_slice();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let (m, v) = law.moments(0);
            assert!((mean - m).abs() < 5.0 * (v / n).sqrt(), "{law}: mean {mean}");
            assert!((var / v - 1.0).abs() < 0.05, "{law}: var {var}");
        }
    }

    #[test]
    fn binomial_is_two_point() {
        let s = InitialLaw::Binomial { c: 50.0, p: 0.3 }.sample(1, 4000, 1).unwrap();
        assert!(s.as_slice().iter().all(|x| *x == 0.0 || *x == 50.0));
        let zeros = s.as_slice().iter().filter(|x| **x == 0.0).count() as f64 / 4000.0;
        assert!((zeros - 0.3).abs() < 0.03, "{zeros}");
    }

    #[test]
    fn larger_systems_extend_smaller_ones() {
        let law: InitialLaw = "normal(0, 1)".parse().unwrap();
        let a = law.sample(5, 40, 2).unwrap();
        let b = law.sample(5, 80, 2).unwrap();
        assert_eq!(a.as_slice(), &b.as_slice()[..80]);
        assert_ne!(law.sample(6, 40, 2).unwrap(), a);
    }

    #[test]
    fn product_dimension_checked() {
        let law: InitialLaw = "product(normal(2, 16), normal(0, 16))".parse().unwrap();
        assert!(law.sample(1, 3, 3).is_err());
        let s = law.sample(1, 4000, 2).unwrap();
        let m0 = s.column(0).iter().sum::<f64>() / 4000.0;
        assert!((m0 - 2.0).abs() < 0.4);
    }

    #[test]
    fn serde_as_string() {
        let law: InitialLaw = "uniform(4, 12)".parse().unwrap();
        let j = serde_json::to_string(&law).unwrap();
        assert_eq!(j, "\"uniform(4, 12)\"");
        assert_eq!(serde_json::from_str::<InitialLaw>(&j).unwrap(), law);
    }
}
