use mvsde::analysis::{contraction_run, poc_error};
use mvsde::brownian::BrownianLattice;
use mvsde::init::InitialLaw;
use mvsde::model::{Expr, ModelSpec, Term};
use mvsde::schemes::{simulate, SchemeConfig, SchemeKind};
use mvsde::{builtin_model, Model, ModelConstants};

fn linear_model(lambda: f64) -> Model {
    Model::from_spec(ModelSpec {
        name: "ou".into(),
        d: 1,
        l: 1,
        f: Expr::zero(),
        f_sigma: Expr::zero(),
        u: Expr::term(Term::Linear(vec![-lambda])),
        b: Expr::zero(),
        sigma: Expr::term(Term::Constant(vec![1.0])),
        f_odd: true,
        f_symmetric: true,
        constants: ModelConstants {
            l_f1: Some(0.0),
            l_us1: Some(-lambda),
            l_us2: Some(0.0),
            l_b1: Some(0.0),
            l_b2: Some(0.0),
            l_b3: Some(0.0),
            ..Default::default()
        },
    })
    .unwrap()
}

#[test]
fn linear_contraction_rate() {
    let lambda = 1.0;
    let m = linear_model(lambda);
    let x0 = "normal(2, 16)".parse::<InitialLaw>().unwrap().sample(1, 200, 1).unwrap();
    let z0 = "normal(0, 1)".parse::<InitialLaw>().unwrap().sample(2, 200, 1).unwrap();
    let lat = BrownianLattice::new(1, 200, 1, 0.01, 3.0).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::Ssm, 0.01, 3.0);
    let tr = contraction_run(&m, &cfg, &lat, &x0, &z0, 0.5).unwrap();
    let want = -2.0 * lambda;
    assert!((tr.fitted_decay - want).abs() < 0.15 * want.abs(), "{}", tr.fitted_decay);
    assert_eq!(tr.non_monotone_fraction(), 0.0);
    assert!(tr.mean_step_rate() <= tr.beta_theoretical + 1e-9);

    let same = contraction_run(&m, &cfg, &lat, &x0, &x0, 0.5).unwrap();
    assert!(same.msd.iter().all(|v| *v == 0.0));
}

#[test]
fn coupling_beats_fresh_noise() {
    let m = builtin_model("poc-dd", 2).unwrap();
    let law: InitialLaw = "normal(0, 1)".parse().unwrap();
    let (h, t) = (0.01, 0.2);
    let cfg = SchemeConfig::new(SchemeKind::Ssm, h, t);
    let run = |lat: &BrownianLattice, n: usize, seed: u64| {
        let x0 = law.sample(seed, n, 2).unwrap();
        simulate(&m, &cfg, lat, &x0, &mut []).unwrap().final_state
    };
    let mut wins = 0;
    for seed in 0..10 {
        let small_lat = BrownianLattice::new(seed, 16, 2, h, t).unwrap();
        let large_lat = small_lat.extend_particles(32).unwrap();
        let small = run(&small_lat, 16, seed);
        let coupled = poc_error(&small, &small_lat, &run(&large_lat, 32, seed), &large_lat).unwrap();
        // fresh noise for the large system; compare directly since the coupling check would refuse it
        let fresh_lat = BrownianLattice::new(seed + 1000, 32, 2, h, t).unwrap();
        let fresh = run(&fresh_lat, 32, seed);
        let uncoupled = mvsde::analysis::rmse_between(&small, &fresh.prefix(16).unwrap()).unwrap();
        assert!(poc_error(&small, &small_lat, &fresh, &fresh_lat).is_err());
        if uncoupled > coupled {
            wins += 1;
        }
    }
    assert!(wins >= 9, "coupled error smaller in only {wins} of 10 runs");
}
