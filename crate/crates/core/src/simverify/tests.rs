use super::*;
use crate::ensemble::example1;
use crate::synthesis::{synthesize, SynthesisSpec};
use crate::sysmodel::Plant;
use nalgebra::{dmatrix, dvector};
use proptest::prelude::*;

fn tol() -> TolerancePolicy<f64> {
    TolerancePolicy::default()
}

/// Trace with prescribed tracking errors on a uniform grid.
fn synthetic(domain: TimeDomain, horizon: f64, samples: usize, signals: &[&dyn Fn(f64) -> f64]) -> SimulationTrace<f64> {
    let times: Vec<f64> = (0..samples).map(|k| horizon * k as f64 / (samples - 1) as f64).collect();
    let epsilon = DMatrix::from_fn(signals.len(), samples, |i, k| signals[i](times[k]));
    SimulationTrace {
        times,
        xi: DMatrix::zeros(0, samples),
        epsilon,
        metadata: TraceMetadata { domain, x0: DVector::zeros(0), reference: Vec::new(), assigned: Vec::new(), epsilon_floor: 1e-12 },
    }
}

fn example_fb() -> (Plant<f64>, FeedbackResult<f64>) {
    let p = Plant::with_defaults(example1()).unwrap();
    let fb = synthesize(&p, &SynthesisSpec::new(vec![-1.0, -2.0, -1.0], vec![2.0, 2.0, 2.0])).unwrap();
    (p, fb)
}

fn example_x0() -> [DVector<f64>; 2] {
    [dvector![0.1, -0.2, 0.1, 0.1, 0.0], dvector![0.6, 0.2, 0.2, -0.2, 1.0]]
}

#[test]
fn diagonal_closed_loop_matches_closed_form() {
    let acl = dmatrix![-1.0, 0.0; 0.0, -2.0];
    let out = DMatrix::identity(2, 2);
    let xi0 = dvector![0.7, -1.3];
    let trace = simulate_closed_loop(&acl, &out, &xi0, TimeDomain::Continuous, SimOptions { horizon: 5.0, samples: 101 }, &tol()).unwrap();
    assert_eq!(trace.times[0], 0.0);
    for (k, &t) in trace.times.iter().enumerate() {
        assert!((trace.epsilon[(0, k)] - 0.7 * (-t).exp()).abs() < 1e-10);
        assert!((trace.epsilon[(1, k)] + 1.3 * (-2.0 * t).exp()).abs() < 1e-10);
    }
}

#[test]
fn discrete_diagonal_closed_loop() {
    let acl = dmatrix![0.5, 0.0; 0.0, 0.25];
    let trace =
        simulate_closed_loop(&acl, &DMatrix::identity(2, 2), &dvector![1.0, 2.0], TimeDomain::Discrete, SimOptions::default_for(TimeDomain::Discrete, 0.5), &tol())
            .unwrap();
    assert_eq!(trace.len(), 201);
    assert_eq!(trace.times[3], 3.0);
    assert!((trace.epsilon[(0, 3)] - 0.125).abs() < 1e-15);
    assert!((trace.epsilon[(1, 2)] - 0.125).abs() < 1e-15);
    let fits = fit_single_mode(&trace).unwrap();
    match fits[0] {
        ModeFit::Fitted { lambda, gamma, relative_residual } => {
            assert!((lambda - 0.5).abs() < 1e-9);
            assert!((gamma - 1.0).abs() < 1e-9);
            assert!(relative_residual < 1e-9);
        }
        ModeFit::Instantaneous => panic!("expected a fit"),
    }
}

#[test]
fn unstable_closed_loop_is_refused() {
    let r = simulate_closed_loop(&dmatrix![0.1], &dmatrix![1.0], &dvector![1.0], TimeDomain::Continuous, SimOptions { horizon: 1.0, samples: 10 }, &tol());
    assert!(matches!(r, Err(Error::UnstableClosedLoop(_))));
    let r = simulate_closed_loop(&dmatrix![-1.5], &dmatrix![1.0], &dvector![1.0], TimeDomain::Discrete, SimOptions { horizon: 10.0, samples: 11 }, &tol());
    assert!(matches!(r, Err(Error::UnstableClosedLoop(_))));
}

#[test]
fn monotonicity_of_analytic_signals() {
    let trace = synthetic(
        TimeDomain::Continuous,
        5.0,
        501,
        &[&|t: f64| (-t).exp(), &|t: f64| (-t).exp() - 2.0 * (-2.0 * t).exp(), &|_| 0.0],
    );
    let m = check_monotonic(&trace, DEFAULT_TIE_TOL);
    assert_eq!(m[0], Monotonicity::Monotone);
    // |ε| starts growing once it crosses zero at t = ln 2
    let Monotonicity::NotMonotone { at } = m[1] else { panic!("{:?}", m[1]) };
    assert!((trace.times[at] - 2f64.ln()).abs() < 0.02);
    assert_eq!(m[2], Monotonicity::Instantaneous);
}

#[test]
fn growing_magnitude_is_not_monotone() {
    // monotone increasing but moving away from zero
    let trace = synthetic(TimeDomain::Continuous, 1.0, 50, &[&|t: f64| -1.0 - t]);
    assert!(matches!(check_monotonic(&trace, DEFAULT_TIE_TOL)[0], Monotonicity::NotMonotone { .. }));
}

#[test]
fn rate_envelope() {
    let trace = synthetic(TimeDomain::Continuous, 8.0, 400, &[&|t: f64| 3.0 * (-2.0 * t).exp(), &|t: f64| 3.0 * (-0.5 * t).exp(), &|t: f64| -(-t).exp()]);
    let ok = check_rate(&trace, RateSpec::new(-1.0, TimeDomain::Continuous).unwrap(), DEFAULT_TIE_TOL);
    assert_eq!(ok, vec![true, false, true]);
    let d = synthetic(TimeDomain::Discrete, 20.0, 21, &[&|t: f64| 0.3f64.powf(t), &|t: f64| 0.9f64.powf(t)]);
    let ok = check_rate(&d, RateSpec::new(0.5, TimeDomain::Discrete).unwrap(), DEFAULT_TIE_TOL);
    assert_eq!(ok, vec![true, false]);
}

#[test]
fn rate_spec_ranges() {
    assert!(RateSpec::new(0.5, TimeDomain::Continuous).is_err());
    assert!(RateSpec::new(-0.5, TimeDomain::Discrete).is_err());
    assert!(RateSpec::new(1.0, TimeDomain::Discrete).is_err());
    assert!(RateSpec::new(f64::NAN, TimeDomain::Continuous).is_err());
}

#[test]
fn two_mode_signal_fails_the_fit() {
    let trace = synthetic(TimeDomain::Continuous, 8.0, 400, &[&|t: f64| (-t).exp() + (-3.0 * t).exp()]);
    assert!(fit_single_mode(&trace).unwrap()[0].residual() > 1e-2);
}

#[test]
fn sign_change_forces_unit_residual() {
    let trace = synthetic(TimeDomain::Continuous, 5.0, 100, &[&|t: f64| (-t).exp() - 2.0 * (-2.0 * t).exp()]);
    assert_eq!(fit_single_mode(&trace).unwrap()[0].residual(), 1.0);
}

#[test]
fn zero_output_fit_is_instantaneous() {
    let trace = synthetic(TimeDomain::Continuous, 1.0, 20, &[&|_| 0.0]);
    assert_eq!(fit_single_mode(&trace).unwrap()[0], ModeFit::Instantaneous);
}

#[test]
fn short_trace_is_insufficient() {
    let trace = synthetic(TimeDomain::Continuous, 1.0, 5, &[&|t: f64| (-t).exp()]);
    assert!(matches!(fit_single_mode(&trace), Err(Error::InsufficientData(_))));
}

#[test]
fn example1_traces_have_one_mode_per_output() {
    let (p, fb) = example_fb();
    let rho = default_rho(&fb, TimeDomain::Continuous);
    assert_eq!(rho, -1.0);
    for x0 in example_x0() {
        let trace = simulate(&p.sys, &fb, &x0, SimOptions::default_for(TimeDomain::Continuous, rho), &p.tol).unwrap();
        // per-sample agreement with γ_k e^{λ_k t}, γ_k read off the first sample
        for (k, lambda) in [-1.0, -2.0, -1.0].into_iter().enumerate() {
            let g = trace.epsilon[(k, 0)];
            let peak = trace.epsilon.row(k).amax();
            for (i, &t) in trace.times.iter().enumerate() {
                assert!((trace.epsilon[(k, i)] - g * (lambda * t).exp()).abs() <= 1e-6 * peak);
            }
        }
        let reports = verify_trace(&trace, Some(RateSpec::new(-1.0, TimeDomain::Continuous).unwrap())).unwrap();
        for (k, r) in reports.iter().enumerate() {
            assert_eq!(r.monotonicity, Monotonicity::Monotone, "output {}", k + 1);
            assert!(r.rate_ok);
            assert!(r.single_mode_ok, "{r:?}");
        }
        let ModeFit::Fitted { lambda, relative_residual, .. } = reports[1].fit else { panic!() };
        assert!((lambda + 2.0).abs() < 1e-6);
        assert!(relative_residual < 1e-6);
    }
}

#[test]
fn starting_at_steady_state_gives_zero_error() {
    let (p, fb) = example_fb();
    let trace = simulate(&p.sys, &fb, &fb.x_ss, SimOptions { horizon: 4.0, samples: 50 }, &p.tol).unwrap();
    assert!(trace.epsilon.amax() == 0.0);
    assert!(check_monotonic(&trace, DEFAULT_TIE_TOL).iter().all(|m| *m == Monotonicity::Instantaneous));
}

#[test]
fn vstar_g_initial_states_are_invisible() {
    let (p, fb) = example_fb();
    for k in fb.directions.len()..fb.v.ncols() {
        let x0 = &fb.x_ss + fb.v.column(k);
        let trace = simulate(&p.sys, &fb, &x0, SimOptions { horizon: 8.0, samples: 400 }, &p.tol).unwrap();
        assert!(trace.epsilon.amax() <= 1e-9, "column {k}: {:e}", trace.epsilon.amax());
    }
}

#[test]
fn instantaneous_outputs_verify() {
    let sys = LtiSystem::new(dmatrix![0.0, 1.0; -5.0, -2.0], dmatrix![0.0; 1.0], dmatrix![1.0, 0.0], dmatrix![1.0], TimeDomain::Continuous).unwrap();
    let p = Plant::with_defaults(sys).unwrap();
    let fb = synthesize(&p, &SynthesisSpec::new(vec![-3.0], vec![1.0])).unwrap();
    let rho = default_rho(&fb, TimeDomain::Continuous);
    let trace = simulate(&p.sys, &fb, &dvector![1.0, -1.0], SimOptions::default_for(TimeDomain::Continuous, rho), &p.tol).unwrap();
    let r = verify_trace(&trace, None).unwrap();
    assert_eq!(r[0].monotonicity, Monotonicity::Instantaneous);
    assert!(r[0].single_mode_ok);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn superposition(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let (p, fb) = example_fb();
        let mut mixer = crate::Mixer::new(seed);
        let x1 = mixer.vector::<f64>(5);
        let x2 = mixer.vector::<f64>(5);
        let opts = SimOptions { horizon: 8.0, samples: 200 };
        let t1 = simulate(&p.sys, &fb, &(&fb.x_ss + &x1), opts, &p.tol).unwrap();
        let t2 = simulate(&p.sys, &fb, &(&fb.x_ss + &x2), opts, &p.tol).unwrap();
        let t12 = simulate(&p.sys, &fb, &(&fb.x_ss + &x1 * a + &x2 * b), opts, &p.tol).unwrap();
        let combo = &t1.epsilon * a + &t2.epsilon * b;
        prop_assert!((&t12.epsilon - combo).amax() <= 1e-9 * (1.0 + t12.epsilon.amax()));
    }
}
