mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use siselab::factorization::{
    estimate_via_outer, inner_outer, recover_d, scalar_value, FactorRoute, PipelineEngine, RecoverMode, StateSpace,
};
use siselab::linalg::max_abs_vec;
use siselab::model::simulate;
use siselab::sise::{run_filter, FilterInit, RunOptions};
use siselab::{Error, Mat, Vector};

#[test]
fn minimum_phase_plant_has_constant_inner_factor() {
    let f = inner_outer(&s1()).unwrap();
    assert_eq!(f.diagnostics.route, FactorRoute::Delayed);
    let d = f.inner.eval(Complex64::new(1.0, 0.0));
    for k in 0..16 {
        let z = Complex64::from_polar(1.0, 0.4 * k as f64);
        let e = f.inner.eval(z);
        assert!((&e - &d).iter().all(|v| v.norm() < 1e-8), "z={z}");
    }
}

#[test]
fn pipeline_matches_plain_sise_on_minimum_phase_plant() {
    let sys = s1();
    let d: Vec<Vector> = (0..=120)
        .map(|t| Vector::from_element(1, (0.2 * t as f64).sin()))
        .collect();
    let tr = simulate(&sys, &d, &Vector::zeros(2), 120, 11, true).unwrap();
    let init = FilterInit::diffuse(2);
    let plain = run_filter(&sys, &tr.measurements, &init, &RunOptions::default()).unwrap();
    let pipe = estimate_via_outer(&sys, &tr.measurements, &init).unwrap();
    assert_eq!(pipe.engine, PipelineEngine::OuterSise);
    for t in 0..=120 {
        assert!(max_abs_vec(&(&pipe.estimates.xhat[t] - &plain.xhat[t])) < 1e-8, "t={t}");
    }
    for t in 1..=120 {
        assert!(max_abs_vec(&(&pipe.estimates.dhat[t] - &plain.dhat[t])) < 1e-8, "t={t}");
    }
}

#[test]
fn pipeline_recovers_pulse_through_maximum_phase_plant() {
    let sys = max_phase_scalar();
    let horizon = 80;
    let mut d = vec![Vector::zeros(1); horizon + 1];
    d[20][0] = 1.0;
    let tr = simulate(&sys, &d, &Vector::zeros(1), horizon, 0, false).unwrap();
    let init = FilterInit::with_state(Vector::zeros(1), one(1.0));
    let pipe = estimate_via_outer(&sys, &tr.measurements, &init).unwrap();
    assert!(pipe.edge > 0 && pipe.edge < horizon / 2);
    for (t, dt) in d.iter().enumerate().take(horizon + 1 - pipe.edge) {
        assert!((pipe.estimates.dhat[t][0] - dt[0]).abs() < 1e-6, "t={t}");
        assert!((pipe.estimates.xhat[t][0] - tr.states[t][0]).abs() < 1e-6, "t={t}");
    }
}

#[test]
fn outer_factor_of_hand_case() {
    let f = inner_outer(&max_phase_scalar()).unwrap();
    assert_eq!(f.diagnostics.route, FactorRoute::Direct);
    assert!(f.diagnostics.outer_zero_radius < 1.0);
    // |T| = |To| on the circle, and the inner factor has unit modulus.
    for k in 0..8 {
        let z = Complex64::from_polar(1.0, 0.3 + 0.7 * k as f64);
        let t = scalar_value(&StateSpace::of_system(&max_phase_scalar()).eval(z));
        let to = scalar_value(&f.outer_realization().eval(z));
        assert!((t.norm() - to.norm()).abs() < 1e-10);
        assert!((scalar_value(&f.inner.eval(z)).norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn refusals() {
    assert!(matches!(inner_outer(&s4()), Err(Error::Unsupported(_))));
    let unstable_a = scalar(1.2, 1.0, 1.0, 1.0, 0.1, 0.1);
    assert!(matches!(inner_outer(&unstable_a), Err(Error::Assumption { .. })));
    let f = inner_outer(&s2()).unwrap();
    let dcheck = vec![Vector::zeros(1); 4];
    assert!(matches!(
        recover_d(&dcheck, &f.inner, RecoverMode::Streaming),
        Err(Error::Unsupported(_))
    ));
}

#[test]
fn nonsquare_pipeline_dispatches_on_verdict() {
    let sys = s4();
    let tr = simulate(&sys, &vec![Vector::zeros(1); 21], &Vector::zeros(2), 20, 1, true).unwrap();
    let pipe = estimate_via_outer(&sys, &tr.measurements, &FilterInit::diffuse(2)).unwrap();
    assert_eq!(pipe.engine, PipelineEngine::PlainSise);
    assert!(pipe.factorization.is_none());
}

#[test]
fn state_space_simulation_matches_plant() {
    let sys = s1();
    let d: Vec<Vector> = (0..=30).map(|t| Vector::from_element(1, (t as f64).cos())).collect();
    let tr = simulate(&sys, &d, &Vector::zeros(2), 30, 0, false).unwrap();
    let out = StateSpace::of_system(&sys).simulate(&d);
    for (o, y) in out.iter().zip(&tr.measurements) {
        assert!(max_abs_vec(&(o - y)) < 1e-14);
    }
    assert_eq!(StateSpace::constant(Mat::identity(2, 2)).states(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn factorization_invariants(seed in any::<u64>(), n in 1usize..4, m in 1usize..3, zf in any::<bool>()) {
        let mut r = rng(seed);
        let sys = random_square(&mut r, n.max(m), m, zf);
        let f = match inner_outer(&sys) {
            Ok(f) => f,
            // Zeros on the circle have no outer factor.
            Err(Error::NumericalLimit { .. }) | Err(Error::NoApplicableVariant(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let dg = &f.diagnostics;
        prop_assert!(dg.product_mismatch < 1e-8, "{dg:?}");
        // Rounding is amplified by about 1 / (1 - r)^2 for a zero at radius r.
        let margin = 1.0 - dg.outer_zero_radius;
        prop_assert!(dg.allpass_deviation < (1e-12 / (margin * margin)).max(1e-8), "{dg:?}");
        prop_assert!(dg.outer_zero_radius <= 1.0 + 1e-9, "{dg:?}");
    }
}
