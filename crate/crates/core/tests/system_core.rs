mod common;

use etd_core::system::{rhs_eval, FnSystem, MatrixSystem};
use etd_core::{pc_integrate, pc_step, DenseMatrix, GridSpec, ModelProblem, SemiLinearSystem, State};
use proptest::prelude::*;

fn decay() -> MatrixSystem {
    MatrixSystem::linear(DenseMatrix::from_diagonal(&[-1.0])).unwrap()
}

fn forced_decay() -> impl SemiLinearSystem {
    FnSystem::new(
        1,
        |u: &[f64], o: &mut [f64]| o[0] = -u[0],
        |_: &[f64], t: f64, o: &mut [f64]| o[0] = t.sin(),
    )
}

/// Exact solution of u' = −u + sin t with u(0) = u0.
fn forced_decay_exact(u0: f64, t: f64) -> f64 {
    (u0 + 0.5) * (-t).exp() + 0.5 * (t.sin() - t.cos())
}

fn problems() -> Vec<ModelProblem> {
    let g = GridSpec::new(40, 10.0).unwrap();
    vec![ModelProblem::che(g, 1.0), ModelProblem::mce(g, 1.0), ModelProblem::che(g, 0.0)]
}

fn check_linear(sys: &dyn SemiLinearSystem, x: &[f64], y: &[f64], a: f64, b: f64) {
    let n = sys.dim();
    let (mut lx, mut ly, mut lz) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    sys.apply_linear(x, &mut lx);
    sys.apply_linear(y, &mut ly);
    let z: Vec<f64> = x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
    sys.apply_linear(&z, &mut lz);
    let combo: Vec<f64> = lx.iter().zip(&ly).map(|(p, q)| a * p + b * q).collect();
    let scale = lx
        .iter()
        .chain(&ly)
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(1.0)
        * (a.abs() + b.abs()).max(1.0);
    assert!(common::max_abs_diff(&lz, &combo) <= 1e-12 * scale);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_part_is_linear(
        x in prop::collection::vec(-1.0..1.0f64, 40),
        y in prop::collection::vec(-1.0..1.0f64, 40),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        for p in problems() {
            check_linear(&p, &x, &y, a, b);
        }
    }

    #[test]
    fn linear_part_is_time_independent(x in prop::collection::vec(-1.0..1.0f64, 40)) {
        for p in problems() {
            let (mut a, mut b) = (vec![0.0; 40], vec![0.0; 40]);
            p.apply_linear(&x, &mut a);
            p.apply_linear(&x, &mut b);
            prop_assert_eq!(a, b);
        }
    }
}

#[test]
fn rhs_examples() {
    let one = FnSystem::new(1, |_: &[f64], o: &mut [f64]| o[0] = 0.0, |_: &[f64], _t: f64, o: &mut [f64]| o[0] = 1.0);
    assert_eq!(rhs_eval(&one, &[5.0], 0.0).unwrap(), vec![1.0]);
    assert_eq!(rhs_eval(&decay(), &[2.0], 0.0).unwrap(), vec![-2.0]);
    assert!(rhs_eval(&decay(), &[2.0, 1.0], 0.0).is_err());
}

#[test]
fn heun_step_on_decay() {
    let s = pc_step(&decay(), &State::new(vec![1.0], 0.0), 0.1).unwrap();
    assert!((s.values[0] - 0.905).abs() < 1e-15);
    assert!((s.time - 0.1).abs() < 1e-16);
}

#[test]
fn pc_reaches_exponential() {
    let s = pc_integrate(&decay(), &State::new(vec![1.0], 0.0), 1.0, 1e-5).unwrap();
    assert_eq!(s.time, 1.0);
    assert!((s.values[0] - (-1.0f64).exp()).abs() < 1e-9);
}

#[test]
fn pc_local_order_three() {
    // one-step error against the closed form, halving τ₁ from 0.02
    let sys = forced_decay();
    let (u0, t0) = (0.7, 0.4);
    let err = |h: f64| {
        let s = pc_step(&sys, &State::new(vec![u0], t0), h).unwrap();
        // closed form started at t0
        let c = (u0 - 0.5 * (t0.sin() - t0.cos())) * t0.exp();
        let truth = c * (-(t0 + h)).exp() + 0.5 * ((t0 + h).sin() - (t0 + h).cos());
        (s.values[0] - truth).abs()
    };
    for h in [0.02, 0.01, 0.005] {
        let ratio = err(h) / err(h / 2.0);
        assert!((ratio - 8.0).abs() <= 0.15 * 8.0, "h={h}: ratio {ratio}");
    }
}

#[test]
fn pc_global_order_two() {
    let sys = forced_decay();
    let u0 = State::new(vec![1.0], 0.0);
    let taus = [0.02, 0.01, 0.005, 0.0025];
    let errs: Vec<f64> = taus
        .iter()
        .map(|&h| (pc_integrate(&sys, &u0, 1.0, h).unwrap().values[0] - forced_decay_exact(1.0, 1.0)).abs())
        .collect();
    let slope = common::loglog_slope(&taus, &errs);
    assert!((slope - 2.0).abs() <= 0.2, "slope {slope}, errors {errs:?}");
}

#[test]
fn pc_lands_on_end_time_with_short_last_step() {
    let s = pc_integrate(&decay(), &State::new(vec![1.0], 0.0), 0.25, 0.1).unwrap();
    assert_eq!(s.time, 0.25);
    // two full Heun steps and one of 0.05
    let r = |h: f64| 1.0 - h + h * h / 2.0;
    assert!((s.values[0] - r(0.1) * r(0.1) * r(0.05)).abs() < 1e-15);
}

#[test]
fn mce_blows_up_above_stability_limit() {
    let g = GridSpec::new(50, 10.0).unwrap();
    let p = ModelProblem::mce(g, 1.0);
    let u0 = State::new(etd_core::initial_condition(&g), 0.0);
    let h6 = g.spacing().powi(6);
    let err = pc_integrate(&p, &u0, 5.0, h6 / 8.0).unwrap_err();
    assert!(err.is_blow_up(), "{err}");
}
