use super::{Expr, Model, ModelConstants, ModelSpec, Term};
use crate::error::{Error, Result};

/// Names accepted by [`builtin_model`].
pub const BUILTIN_MODELS: &[&str] =
    &["double-well", "invariant", "vdp2d", "supermeasure-case1", "supermeasure-case2", "poc-dd"];

fn cubic_kernel() -> Expr {
    // f(x) = -x |x|^2
    Expr::term(Term::PowerLaw { c: -1.0, k: 3.0 })
}

fn need_dim(name: &str, d: usize, ok: bool, want: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("model `{name}` needs d {want}, got {d}")))
    }
}

/// Constants shared by the double-well family. With `m = 2.2` the offset
/// bound `<x-y, u(x)-u(y)> + 2(m-1)|sigma(x)-sigma(y)|^2 <= 12 |x-y|^2` is
/// tight at `x = y = 8`.
fn double_well_constants(m: f64) -> ModelConstants {
    ModelConstants {
        l_f1: Some(0.0),
        l_f2: Some(3.0),
        l_f3: Some(0.0),
        l_us1: Some(12.0),
        l_us2: Some(0.0),
        l_b1: Some(1.0),
        l_b2: Some(1.0),
        l_b3: Some(0.0),
        q1: Some(2.0),
        q2: Some(2.0),
        m: Some(m),
        ..Default::default()
    }
}

fn double_well_spec(name: &str) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        d: 1,
        l: 1,
        f: cubic_kernel(),
        f_sigma: Expr::zero(),
        u: Expr::term(Term::PowerLaw { c: -0.25, k: 3.0 }),
        b: Expr::term(Term::Linear(vec![1.0])),
        sigma: Expr::term(Term::Linear(vec![1.0])).plus(Term::Power { p: 2, c: vec![0.25] }),
        f_odd: true,
        f_symmetric: true,
        constants: double_well_constants(2.2),
    }
}

/// Builds one of the named example models.
///
/// * `double-well` (d = 1): `u = -x^3/4`, `f = -x^3`, `b = x`, `sigma = x + x^2/4`.
/// * `invariant` (d = 1): `u = -x^3`, `f = -x^3`, `b = -x`, `sigma = (1 - x^2)/4`.
/// * `vdp2d` (d = 2): Van der Pol type oscillator with `f = -x|x|^2`.
/// * `supermeasure-case1` (d = 1): double-well plus `f_sigma(x) = x^2`.
/// * `supermeasure-case2` (d = 1): double-well plus `2 Var(mu)` in the diffusion.
/// * `poc-dd` (d >= 2): fully coupled cubic model used for particle-count sweeps.
pub fn builtin_model(name: &str, d: usize) -> Result<Model> {
    let spec = match name {
        "double-well" => {
            need_dim(name, d, d == 1, "= 1")?;
            double_well_spec(name)
        }
        "invariant" => {
            need_dim(name, d, d == 1, "= 1")?;
            ModelSpec {
                name: name.to_string(),
                d: 1,
                l: 1,
                f: cubic_kernel(),
                f_sigma: Expr::zero(),
                u: Expr::term(Term::PowerLaw { c: -1.0, k: 3.0 }),
                b: Expr::term(Term::Linear(vec![-1.0])),
                sigma: Expr::term(Term::Constant(vec![0.25])).plus(Term::Power { p: 2, c: vec![-0.25] }),
                f_odd: true,
                f_symmetric: true,
                // m = 7 is the largest order for which the offset bound holds with l_us1 = 0.
                constants: ModelConstants {
                    l_f1: Some(0.0),
                    l_f2: Some(3.0),
                    l_f3: Some(0.0),
                    l_us1: Some(0.0),
                    l_us2: Some(0.0),
                    l_b1: Some(1.0),
                    l_b2: Some(-1.0),
                    l_b3: Some(0.0),
                    q1: Some(2.0),
                    q2: Some(2.0),
                    m: Some(7.0),
                    ..Default::default()
                },
            }
        }
        "vdp2d" => {
            need_dim(name, d, d == 2, "= 2")?;
            ModelSpec {
                name: name.to_string(),
                d: 2,
                l: 2,
                f: cubic_kernel(),
                f_sigma: Expr::zero(),
                u: Expr::term(Term::Power { p: 3, c: vec![-1.0 / 3.0, 0.0] }),
                b: Expr::term(Term::Matrix(vec![1.0, -1.0, 1.0, 0.0])),
                sigma: Expr::term(Term::Constant(vec![1.0, 0.0, 0.0, 0.0]))
                    .plus(Term::Power { p: 2, c: vec![0.25, 0.0] }),
                f_odd: true,
                f_symmetric: true,
                constants: ModelConstants {
                    l_f1: Some(0.0),
                    l_f3: Some(0.0),
                    l_us1: Some(0.0),
                    l_us2: Some(0.0),
                    // largest eigenvalue of A^T A for A = [[1, -1], [1, 0]]
                    l_b1: Some(0.5 * (3.0 + 5f64.sqrt())),
                    l_b2: Some(1.0),
                    l_b3: Some(0.0),
                    q1: Some(2.0),
                    q2: Some(2.0),
                    m: Some(3.0),
                    ..Default::default()
                },
            }
        }
        "supermeasure-case1" | "supermeasure-case2" => {
            need_dim(name, d, d == 1, "= 1")?;
            let mut spec = double_well_spec(name);
            // Declared at the moment order the convergence theory asks for
            // (m > 4q + 4); the offset bound is known to fail there.
            spec.constants = double_well_constants(13.0);
            if name.ends_with('1') {
                spec.f_sigma = Expr::term(Term::Power { p: 2, c: vec![1.0] });
            } else {
                // int int (y - z)^2 mu(dy) mu(dz) = 2 Var(mu)
                spec.sigma = spec.sigma.plus(Term::Variance(2.0));
            }
            spec
        }
        "poc-dd" => {
            need_dim(name, d, d >= 2, ">= 2")?;
            ModelSpec {
                name: name.to_string(),
                d,
                l: d,
                f: cubic_kernel(),
                f_sigma: Expr::zero(),
                u: Expr::term(Term::Power { p: 3, c: vec![-1.0 / 3.0] }),
                b: Expr::term(Term::Linear(vec![1.0])),
                // row i = x^T + (x_i^2 / 4) e_i^T
                sigma: Expr::term(Term::Broadcast(1.0)).plus(Term::Power { p: 2, c: vec![0.25] }),
                f_odd: true,
                f_symmetric: true,
                constants: ModelConstants {
                    l_f1: Some(0.0),
                    l_f3: Some(0.0),
                    l_us1: Some(3.6 + 2.4 * d as f64),
                    l_us2: Some(0.0),
                    l_b1: Some(1.0),
                    l_b2: Some(1.0),
                    l_b3: Some(0.0),
                    q1: Some(2.0),
                    q2: Some(2.0),
                    m: Some(2.2),
                    ..Default::default()
                },
            }
        }
        other => return Err(Error::UnknownModel(other.to_string())),
    };
    Model::from_spec(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{convolve_at, MeasureSummary, ParticleState};

    fn drift_at_dirac(model: &Model, x: &[f64]) -> Vec<f64> {
        // v(x, delta_x) + b(x, delta_x); the convolution with a Dirac at x vanishes.
        let state = ParticleState::from_rows(&[x.to_vec()]).unwrap();
        let mu = MeasureSummary::of(&state);
        let d = model.dim();
        let mut conv = vec![0.0; d];
        convolve_at(model.f(), &state, x, &mut conv).unwrap();
        let mut u = vec![0.0; d];
        let mut b = vec![0.0; d];
        model.u().eval(0.0, x, &mu, &mut u);
        model.b().eval(0.0, x, &mu, &mut b);
        (0..d).map(|k| conv[k] + u[k] + b[k]).collect()
    }

    #[test]
    fn double_well_roots() {
        let m = builtin_model("double-well", 1).unwrap();
        for r in [-2.0, 0.0, 2.0] {
            assert_eq!(drift_at_dirac(&m, &[r])[0], 0.0);
        }
        assert!(drift_at_dirac(&m, &[1.0])[0] > 0.0);
        assert!(drift_at_dirac(&m, &[3.0])[0] < 0.0);
    }

    #[test]
    fn invariant_at_origin() {
        let m = builtin_model("invariant", 1).unwrap();
        assert_eq!(drift_at_dirac(&m, &[0.0])[0], 0.0);
        let mut s = [0.0];
        let state = ParticleState::zeros(1, 1);
        m.sigma().eval(0.0, &[0.0], &MeasureSummary::of(&state), &mut s);
        assert_eq!(s[0], 0.25);
    }

    #[test]
    fn vdp_at_origin() {
        let m = builtin_model("vdp2d", 2).unwrap();
        let state = ParticleState::zeros(1, 2);
        let mu = MeasureSummary::of(&state);
        let mut u = [1.0; 2];
        let mut b = [1.0; 2];
        let mut s = [9.0; 4];
        m.u().eval(0.0, &[0.0, 0.0], &mu, &mut u);
        m.b().eval(0.0, &[0.0, 0.0], &mu, &mut b);
        m.sigma().eval(0.0, &[0.0, 0.0], &mu, &mut s);
        assert_eq!(u, [0.0, 0.0]);
        assert_eq!(b, [0.0, 0.0]);
        assert_eq!(&s[..2], &[1.0, 0.0]);
        m.sigma().eval(0.0, &[2.0, 5.0], &mu, &mut s);
        assert_eq!(s, [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn poc_diffusion_matrix_layout() {
        let m = builtin_model("poc-dd", 3).unwrap();
        let state = ParticleState::zeros(1, 3);
        let mu = MeasureSummary::of(&state);
        let mut s = [0.0; 9];
        m.sigma().eval(0.0, &[1.0, 2.0, 4.0], &mu, &mut s);
        assert_eq!(s, [1.25, 2.0, 4.0, 1.0, 3.0, 4.0, 1.0, 2.0, 8.0]);
    }

    #[test]
    fn case2_diffusion_sees_variance() {
        let m = builtin_model("supermeasure-case2", 1).unwrap();
        let state = ParticleState::from_rows(&[vec![-1.0], vec![1.0]]).unwrap();
        let mut s = [0.0];
        m.sigma().eval(0.0, &[0.0], &MeasureSummary::of(&state), &mut s);
        // int int (y - z)^2 = 2 Var = 2
        assert_eq!(s[0], 2.0);
        assert!(m.needs_summary());
    }

    #[test]
    fn unknown_and_bad_dimension() {
        assert!(matches!(builtin_model("nope", 1), Err(Error::UnknownModel(_))));
        assert!(matches!(builtin_model("double-well", 2), Err(Error::DimensionMismatch(_))));
        assert!(matches!(builtin_model("vdp2d", 1), Err(Error::DimensionMismatch(_))));
        assert!(matches!(builtin_model("poc-dd", 1), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn every_builtin_kernel_vanishes_at_origin() {
        for name in BUILTIN_MODELS {
            let d = match *name {
                "vdp2d" => 2,
                "poc-dd" => 4,
                _ => 1,
            };
            let m = builtin_model(name, d).unwrap();
            let mut out = vec![1.0; m.f().out_len()];
            m.f().eval(&vec![0.0; d], &mut out);
            assert!(out.iter().all(|v| *v == 0.0));
            let mut out = vec![1.0; m.f_sigma().out_len()];
            m.f_sigma().eval(&vec![0.0; d], &mut out);
            assert!(out.iter().all(|v| *v == 0.0));
            assert!(m.zeta().unwrap().is_finite());
        }
    }
}
