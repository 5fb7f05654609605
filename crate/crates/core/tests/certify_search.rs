use std::collections::BTreeMap;

use deltacert::certify::{
    barrier_confidence, barrier_max_delta, barrier_verify_fixed_delta, check_invariance, d_grid, guard_span,
    test_delta, theorem_constants, theorem_constants_unchecked, verify_iss_bound, BarrierConfig, CertifyConfig,
    CertifyError, Certification, InvarianceConfig, IssConfig,
};
use deltacert::certify::iss::InitDistribution;
use deltacert::hybrid::IntegratorConfig;
use deltacert::models::testing::LinearReturnModel;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig, PeriodicOrbit};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

struct Setup {
    sys: Box<dyn deltacert::hybrid::HybridSystem>,
    orbit: PeriodicOrbit,
}

fn setup(kind: ModelKind, band: Option<f64>) -> Setup {
    let mut params = BTreeMap::new();
    if let Some(b) = band {
        params.insert("band".to_string(), b);
    }
    let built = build(kind, &params).unwrap();
    let orbit = find_fixed_point(built.system.as_ref(), &built.initial_guess, &IntegratorConfig::default(), &FixedPointConfig::default()).unwrap();
    Setup { sys: built.system, orbit }
}

fn certify(s: &Setup, cfg: &CertifyConfig, seed: u64) -> Certification {
    test_delta(s.sys.as_ref(), &s.orbit, &IntegratorConfig::default(), cfg, seed).unwrap()
}

#[test]
fn scalar_constants() {
    let p = 1.0 / 0.36;
    let tc = theorem_constants(p, p, 1.0, 2.0, 3.0, 0.01, 1.0).unwrap();
    assert!((tc.m - 1.0).abs() <= 1e-12);
    assert!((tc.alpha - 0.8).abs() <= 1e-12);
    assert!((tc.gamma - 3.0).abs() <= 1e-12);
    assert!((tc.r_delta - p * 9e-4).abs() <= 1e-15);
    assert!((tc.delta_max - 1.0 / 3.0).abs() <= 1e-12);
    assert!(matches!(
        theorem_constants(p, p, 1.0, 2.0, 3.0, 0.5, 1.0),
        Err(CertifyError::HypothesisViolated { .. })
    ));
    assert!(theorem_constants(p, p, 1.0, 2.0, 3.0, tc.delta_max, 1.0).is_err());
    assert!(theorem_constants_unchecked(2.0, 1.0, 0.1, 2.0, 1.0, 0.1, 1.0).is_err());
}

#[test]
fn grid_shape() {
    assert_eq!(d_grid(0.3, 1), vec![0.0]);
    let g = d_grid(0.3, 11);
    assert_eq!(g.len(), 11);
    assert_eq!(g[0], -0.3);
    assert_eq!(g[10], 0.3);
    assert_eq!(g[5], 0.0);
}

#[test]
fn search_trace_follows_the_schedule() {
    let s = setup(ModelKind::BouncingBall, None);
    let cfg = CertifyConfig::default();
    let result = certify(&s, &cfg, 0);
    let trace = &result.trace;
    assert_eq!(trace[0].delta, cfg.delta_step);
    assert_eq!(trace[0].chi, 1.0);
    let mut passes = 0;
    for w in trace.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.pass {
            passes += 1;
            assert_eq!(b.chi, 1.0);
            assert_eq!(b.delta, cfg.delta_step * (passes + 1) as f64);
        } else {
            assert_eq!(b.delta, a.delta);
            assert_eq!(b.chi, a.chi + cfg.chi_step);
        }
        assert!(b.chi <= cfg.chi_max);
    }
    let cert = &result.certificate;
    let last_pass = trace.iter().rev().find(|t| t.pass).unwrap();
    assert_eq!((cert.delta_star, cert.chi_star), (last_pass.delta, last_pass.chi));
    assert_eq!(cert.search.trials, trace.len());
    assert!(cert.certified());
}

#[test]
fn search_is_reproducible() {
    let s = setup(ModelKind::BouncingBall, None);
    let cfg = CertifyConfig { samples: 16, ..CertifyConfig::default() };
    let a = certify(&s, &cfg, 5).certificate;
    let b = certify(&s, &cfg, 5).certificate;
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn certificate_round_trips_through_json() {
    let s = setup(ModelKind::BouncingBall, None);
    let cert = certify(&s, &CertifyConfig { samples: 16, ..CertifyConfig::default() }, 0).certificate;
    let text = serde_json::to_string(&cert).unwrap();
    let back: deltacert::certify::DeltaRobustnessCertificate = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cert);
    let lyap = back.lyapunov().unwrap();
    assert_eq!(lyap.chi, cert.chi_star);
}

#[test]
fn more_samples_never_certify_more() {
    // a trial that passes with many samples also passes with a subset of them
    let s = setup(ModelKind::BouncingBall, None);
    let few = certify(&s, &CertifyConfig { samples: 8, ..CertifyConfig::default() }, 0).certificate;
    let many = certify(&s, &CertifyConfig::default(), 0).certificate;
    assert!(many.delta_star <= few.delta_star + 1e-12 || few.delta_star == 0.0);
}

#[test]
fn no_search_budget() {
    let s = setup(ModelKind::BouncingBall, None);
    let result = certify(&s, &CertifyConfig { chi_max: 0.0, ..CertifyConfig::default() }, 0);
    assert!(result.trace.is_empty());
    assert_eq!(result.certificate.delta_star, 0.0);
}

#[test]
fn fragile_ball_gets_nothing() {
    let s = setup(ModelKind::FragileBall, Some(1e-3));
    let result = certify(&s, &CertifyConfig::default(), 0);
    let cert = &result.certificate;
    assert_eq!(cert.delta_star, 0.0);
    assert!(cert.constants.is_none());
    assert!(!cert.certified());
    assert!((cert.spectral_radius - 0.8).abs() < 1e-4);
    let err = verify_iss_bound(s.sys.as_ref(), cert, &IntegratorConfig::default(), &IssConfig::default()).unwrap_err();
    assert!(matches!(err, CertifyError::DegenerateConfig(_)));
}

#[test]
fn iss_and_invariance_on_certified_ball() {
    let s = setup(ModelKind::BouncingBall, None);
    let integ = IntegratorConfig::default();
    let result = certify(&s, &CertifyConfig::default(), 0);
    let cert = &result.certificate;
    let cfg = IssConfig { rollouts: 200, steps: 20, ..IssConfig::default() };
    let report = verify_iss_bound(s.sys.as_ref(), cert, &integ, &cfg).unwrap();
    assert!(report.passed());
    assert_eq!(report.records.len(), 200 * 20);
    assert_eq!(report.records[0].k, 1);
    assert_eq!(report.records[19].k, 20);
    let inv = check_invariance(s.sys.as_ref(), &result.lyapunov, cert.delta_star, &integ, &InvarianceConfig::default()).unwrap();
    assert!(inv.pass && inv.worst_excess <= 0.0);
}

#[test]
fn undisturbed_rollouts_from_the_orbit_stay_put() {
    let s = setup(ModelKind::BouncingBall, None);
    let integ = IntegratorConfig::default();
    let cert = certify(&s, &CertifyConfig { samples: 16, ..CertifyConfig::default() }, 0).certificate;
    let cfg = IssConfig { rollouts: 3, steps: 10, zero_disturbance: true, init: InitDistribution::Center, ..IssConfig::default() };
    let report = verify_iss_bound(s.sys.as_ref(), &cert, &integ, &cfg).unwrap();
    let gamma_delta = report.constants.gamma * report.delta;
    for r in &report.records {
        assert!(r.dist_to_xstar < 1e-8);
        assert!((r.bound_value - gamma_delta).abs() < 1e-6);
    }
}

#[test]
fn barrier_grid_of_one_sees_only_the_nominal_level() {
    // P_d(s, z) = (d, z/2): contracting at d = 0, but d = ±δ alone puts the
    // clock coordinate on the barrier's boundary.
    let sys = LinearReturnModel::new(DMatrix::identity(2, 2) * 0.5).unwrap();
    let integ = IntegratorConfig::default();
    let x_star = DVector::zeros(3);
    let nominal = BarrierConfig { samples: 50, grid_points: 1, ..BarrierConfig::default() };
    let r = barrier_verify_fixed_delta(&sys, &x_star, 0.1, &integ, &nominal).unwrap();
    assert!(r.pass, "{r:?}");
    assert_eq!(r.guard_span, [-0.1, 0.1]);
    let full = BarrierConfig { grid_points: 11, ..nominal };
    let r = barrier_verify_fixed_delta(&sys, &x_star, 0.1, &integ, &full).unwrap();
    assert!(!r.pass);
}

#[test]
fn barrier_arithmetic_and_verdicts() {
    assert!((barrier_confidence(0.05, 100) - 0.994079).abs() < 1e-6);
    let s = setup(ModelKind::BouncingBall, None);
    let integ = IntegratorConfig::default();
    let (lo, hi) = guard_span(s.sys.as_ref(), &s.orbit.fixed_point, 0.01);
    assert_eq!((lo, hi), (-0.01, 0.01));
    let cfg = BarrierConfig { samples: 40, ..BarrierConfig::default() };
    let max = barrier_max_delta(s.sys.as_ref(), &s.orbit.fixed_point, (0.0, 0.05), 5, &integ, &cfg).unwrap();
    assert_eq!(max.reports.len(), 5);
    assert_eq!(max.empty, max.accepted.is_empty());
    assert!(barrier_verify_fixed_delta(s.sys.as_ref(), &s.orbit.fixed_point, 0.0, &integ, &cfg).is_err());
    let x_star = DVector::from_vec(vec![0.0, -5.0]);
    assert!(barrier_max_delta(s.sys.as_ref(), &x_star, (0.1, 0.05), 5, &integ, &cfg).is_err());
}

#[test]
fn config_validation() {
    assert!(CertifyConfig { delta_step: 0.0, ..CertifyConfig::default() }.validate().is_err());
    assert!(CertifyConfig { chi_max: -1.0, ..CertifyConfig::default() }.validate().is_err());
    assert!(CertifyConfig { samples: 0, ..CertifyConfig::default() }.validate().is_err());
}

proptest! {
    #[test]
    fn constant_relations(
        k1 in 0.1f64..10.0, ratio in 1.0f64..20.0, frac in 0.01f64..0.99,
        chi in 1.0f64..50.0, delta in 1e-4f64..1.0, rho in 0.01f64..10.0,
    ) {
        let k2 = k1 * ratio;
        let k3 = frac * k2;
        let tc = theorem_constants_unchecked(k1, k2, k3, 2.0, chi, delta, rho).unwrap();
        prop_assert!(tc.m >= 1.0);
        prop_assert!(tc.alpha > 0.0 && tc.alpha < 1.0);
        prop_assert!((tc.gamma - tc.m * chi).abs() <= 1e-12 * tc.gamma);
        prop_assert!(tc.r1 <= tc.r2 * (1.0 + 1e-15));
        // ‖x̃‖ ≤ r1 implies V ≤ r(δ), and V ≤ r(δ) implies ‖x̃‖ ≤ r2
        prop_assert!((k2 * tc.r1 * tc.r1 - tc.r_delta).abs() <= 1e-9 * tc.r_delta);
        prop_assert!((k1 * tc.r2 * tc.r2 - tc.r_delta).abs() <= 1e-9 * tc.r_delta);
        let accepted = theorem_constants(k1, k2, k3, 2.0, chi, delta, rho).is_ok();
        prop_assert_eq!(accepted, delta < tc.delta_max);
    }

    #[test]
    fn grid_is_symmetric_and_bounded(delta in 0.0f64..1.0, n in 1usize..40) {
        let g = d_grid(delta, n);
        prop_assert_eq!(g.len(), n);
        for (a, b) in g.iter().zip(g.iter().rev()) {
            prop_assert!((a + b).abs() <= 1e-15);
        }
        prop_assert!(g.iter().all(|d| d.abs() <= delta));
        prop_assert!(g.windows(2).all(|w| w[0] <= w[1]));
    }
}
