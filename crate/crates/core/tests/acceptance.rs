//! One PASS/FAIL line per acceptance criterion.
//!
//! The lines are the verdict. The process exits 0 so that `cargo test`
//! goes on to the remaining targets; set `DELTACERT_ACCEPTANCE_STRICT=1` to
//! exit non-zero when any criterion fails.

use std::collections::BTreeMap;
use std::time::Instant;

use deltacert::certify::{
    barrier_confidence, barrier_verify_fixed_delta, check_invariance, test_delta, theorem_constants, verify_iss_bound,
    BarrierConfig, CertifyConfig, CertifyError, Certification, InvarianceConfig, IssConfig,
};
use deltacert::cli::output::to_json_string;
use deltacert::hybrid::{HybridSystem, IntegratorConfig};
use deltacert::linalg;
use deltacert::lyapunov::{lyapunov_residual, solve_discrete_lyapunov, RobustLyapunovCertificate};
use deltacert::models::{build, BouncingBall, BouncingBallParams, CompassGait, CompassGaitConfig, ModelKind};
use deltacert::poincare::{find_fixed_point, poincare_extended, rollout, DisturbanceSequence, FixedPointConfig, PeriodicOrbit};
use deltacert::sampling::{stream, Purpose};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn model(kind: ModelKind, band: Option<f64>) -> (Box<dyn HybridSystem>, PeriodicOrbit) {
    let mut params = BTreeMap::new();
    if let Some(b) = band {
        params.insert("band".to_string(), b);
    }
    let built = build(kind, &params).expect("model builds");
    let orbit = find_fixed_point(built.system.as_ref(), &built.initial_guess, &IntegratorConfig::default(), &FixedPointConfig::default())
        .expect("orbit exists");
    (built.system, orbit)
}

fn criterion_1() -> Outcome {
    let sys = BouncingBall::new(BouncingBallParams::default()).unwrap();
    let cfg = IntegratorConfig::default();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let v = -3.0 - 0.4 * i as f64;
        for j in 0..10 {
            let d = -0.3 + 0.6 * j as f64 / 9.0;
            let next = poincare_extended(&sys, &DVector::from_vec(vec![0.0, v]), d, &cfg);
            let v_ref = sys.analytic_map(v, 0.0, d).unwrap();
            let err = next.map_or(f64::INFINITY, |x| ((x[1] - v_ref) / v_ref).abs().max((x[0] - d).abs()));
            worst = worst.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-8 && secs < 5.0, format!("max rel error {worst:.2e} (tol 1e-8), {secs:.2} s (limit 5 s)"))
}

fn criterion_2() -> Outcome {
    let (_, orbit) = model(ModelKind::BouncingBall, None);
    let x = &orbit.fixed_point;
    let ex = x[0].abs().max((x[1] + 5.0).abs());
    let et = (orbit.period - 1.019367).abs();
    let lead = orbit.eigenvalue_moduli().into_iter().fold(0.0, f64::max);
    let el = (lead - 0.8).abs();
    outcome(
        ex <= 1e-8 && et <= 1e-6 && el <= 1e-4,
        format!("x* error {ex:.1e} (1e-8), T = {:.9} error {et:.1e} (1e-6), |λ| = {lead:.8} error {el:.1e} (1e-4)", orbit.period),
    )
}

fn criterion_3() -> Outcome {
    let a = DMatrix::from_element(1, 1, 0.8);
    let q = DMatrix::from_element(1, 1, 1.0);
    let p = solve_discrete_lyapunov(&a, &q).unwrap();
    let scalar = linalg::frobenius(&lyapunov_residual(&a, &p, &q)) / linalg::frobenius(&q);
    let mut rng = stream(2024, Purpose::Audit, 0, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let a = &m * (rng.random_range(0.1..0.95) / linalg::spectral_radius(&m).unwrap());
        let b = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let q = &b * b.transpose() + DMatrix::identity(4, 4);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        worst = worst.max(linalg::frobenius(&lyapunov_residual(&a, &p, &q)) / linalg::frobenius(&q));
    }
    outcome(
        scalar <= 1e-10 && worst <= 1e-10 && (p[(0, 0)] - 1.0 / 0.36).abs() < 1e-12,
        format!("scalar P = {:.6}, relative residual {scalar:.1e}; 50 random 4x4 worst {worst:.1e} (tol 1e-10)", p[(0, 0)]),
    )
}

fn criterion_4() -> Outcome {
    let a = DMatrix::from_element(1, 1, 0.8);
    let cert = RobustLyapunovCertificate::from_jacobian(&a, &DVector::zeros(1), &[1.0], None, 1.0).unwrap();
    let chi = 3.0;
    let tc = theorem_constants(cert.k1, cert.k2, cert.k3, cert.c, chi, 1e-3, 1.0).unwrap();
    let em = (tc.m - 1.0).abs();
    let ea = (tc.alpha - 0.8).abs();
    let eg = (tc.gamma - chi).abs();
    let at_max = theorem_constants(cert.k1, cert.k2, cert.k3, cert.c, chi, tc.delta_max, 1.0);
    let above = theorem_constants(cert.k1, cert.k2, cert.k3, cert.c, chi, 2.0 * tc.delta_max, 1.0);
    let rejected = matches!(at_max, Err(CertifyError::HypothesisViolated { .. }))
        && matches!(above, Err(CertifyError::HypothesisViolated { .. }));
    outcome(
        em <= 1e-12 && ea <= 1e-12 && eg <= 1e-12 && rejected,
        format!("|M−1| {em:.1e}, |α−0.8| {ea:.1e}, |γ−χ| {eg:.1e} (tol 1e-12); δ ≥ δ_max rejected: {rejected}"),
    )
}

struct Certified {
    sys: Box<dyn HybridSystem>,
    runs: Vec<Certification>,
}

fn criterion_5(c: &Certified, elapsed_certify: f64) -> Outcome {
    let integ = IntegratorConfig::default();
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (seed, run) in c.runs.iter().enumerate() {
        let cert = &run.certificate;
        let audit = cert.audit.expect("audit present when δ* > 0");
        let iss_cfg = IssConfig { rollouts: 1000, steps: 50, seed: seed as u64, ..IssConfig::default() };
        let iss = verify_iss_bound(c.sys.as_ref(), cert, &integ, &iss_cfg).unwrap();
        let ok = cert.delta_star > 0.0 && audit.pass && iss.violations == 0 && iss.truncations == 0;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: δ* {} χ* {} audit {}x{} worst {:.2e}, ISS viol {} trunc {}",
            cert.delta_star, cert.chi_star, audit.samples, CertifyConfig::default().grid_points, audit.worst_margin, iss.violations, iss.truncations
        ));
    }
    let total = elapsed_certify + start.elapsed().as_secs_f64();
    pass &= total < 120.0;
    outcome(pass, format!("{}; total {total:.1} s (limit 120 s)", lines.join("; ")))
}

fn criterion_6(ball: &Certification) -> Outcome {
    let (sys, orbit) = model(ModelKind::FragileBall, Some(1e-3));
    let fragile = test_delta(sys.as_ref(), &orbit, &IntegratorConfig::default(), &CertifyConfig::default(), 0).unwrap();
    let rb = ball.certificate.spectral_radius;
    let rf = fragile.certificate.spectral_radius;
    let pass = (rb - 0.8).abs() <= 1e-4
        && (rf - 0.8).abs() <= 1e-4
        && ball.certificate.delta_star > 0.0
        && fragile.certificate.delta_star == 0.0;
    outcome(
        pass,
        format!(
            "ρ_spec ball {rb:.8} fragile {rf:.8}; δ* ball {} fragile {}",
            ball.certificate.delta_star, fragile.certificate.delta_star
        ),
    )
}

fn criterion_7(c: &Certified) -> Outcome {
    let integ = IntegratorConfig::default();
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for (seed, run) in c.runs.iter().enumerate() {
        let cfg = InvarianceConfig { boundary_samples: 256, seed: seed as u64, ..InvarianceConfig::default() };
        let r = check_invariance(c.sys.as_ref(), &run.lyapunov, run.certificate.delta_star, &integ, &cfg).unwrap();
        pass &= r.pass && r.samples == 256;
        worst = worst.max(r.worst_excess);
    }
    outcome(pass, format!("{} certificates, 256 boundary samples each, worst V-excess {worst:.2e} (≤ 0)", c.runs.len()))
}

fn criterion_8(ball: &Certification) -> Outcome {
    let conf = barrier_confidence(0.05, 100);
    let arithmetic = (conf - 0.994079).abs() <= 1e-6;
    let integ = IntegratorConfig::default();
    let delta = ball.certificate.delta_star;
    let cfg = BarrierConfig { samples: 100, epsilon: 0.05, ..BarrierConfig::default() };
    let x_ball = ball.certificate.fixed_point();
    let (bsys, _) = model(ModelKind::BouncingBall, None);
    let on_ball = barrier_verify_fixed_delta(bsys.as_ref(), &x_ball, delta, &integ, &cfg).unwrap();
    let (fsys, forbit) = model(ModelKind::FragileBall, None);
    let on_fragile = barrier_verify_fixed_delta(fsys.as_ref(), &forbit.fixed_point, delta, &integ, &cfg).unwrap();
    outcome(
        arithmetic && on_ball.pass && !on_fragile.pass,
        format!(
            "confidence {conf:.6}; ball at δ = {delta}: {} ({} of {} samples, worst margin {:.2e}); fragile: {} (worst margin {:.2e})",
            if on_ball.pass { "pass" } else { "fail" },
            on_ball.passed_samples,
            on_ball.samples,
            on_ball.worst_margin,
            if on_fragile.pass { "pass" } else { "fail" },
            on_fragile.worst_margin
        ),
    )
}

fn criterion_9() -> Outcome {
    let shipped = CompassGaitConfig::shipped();
    let cg = CompassGait::with_scale(shipped.params, shipped.state_scale.clone()).unwrap();
    let integ = IntegratorConfig::default();
    let orbit =
        find_fixed_point(&cg, &DVector::from_column_slice(&shipped.initial_guess), &integ, &FixedPointConfig::default()).unwrap();
    let lead = orbit.eigenvalue_moduli().into_iter().fold(0.0, f64::max);

    let run = rollout(&cg, &orbit.fixed_point, &DisturbanceSequence::zeros(100), &integ);
    let mut states = vec![orbit.fixed_point.clone()];
    states.extend(run.states.iter().cloned());
    let mut constraint: f64 = 0.0;
    let mut energy_ok = true;
    let kinetic = |x: &[f64]| cg.energy(x) - cg.energy(&[x[0], x[1], 0.0, 0.0]);
    for x in &states[..states.len() - 1] {
        let qd_plus = cg.impact_velocity(x.as_slice()).unwrap();
        constraint = constraint.max((cg.swing_foot_jacobian(x[0], x[1]) * qd_plus).amax());
        let x_plus = cg.reset(x.as_slice()).unwrap();
        energy_ok &= kinetic(&x_plus) <= kinetic(x.as_slice());
    }
    let drift = run.states.iter().map(|x| (x - &orbit.fixed_point).amax()).fold(0.0, f64::max);
    let pass = lead < 1.0 && constraint <= 1e-10 && energy_ok && !run.truncated() && run.states.len() == 100 && drift <= 1e-6;
    outcome(
        pass,
        format!(
            "max|λ| {lead:.6}; |J_h q̇⁺| {constraint:.1e} (1e-10); kinetic energy drops at every impact: {energy_ok}; 100-step drift {drift:.1e} (1e-6)"
        ),
    )
}

fn criterion_10(sys: &dyn HybridSystem, orbit: &PeriodicOrbit) -> Outcome {
    let integ = IntegratorConfig::default();
    let cfg = CertifyConfig::default();
    let run_with = |threads: usize| -> String {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| to_json_string(&test_delta(sys, orbit, &integ, &cfg, 0).unwrap().certificate).unwrap())
    };
    let outputs = [run_with(1), run_with(1), run_with(8), run_with(8)];
    let identical = outputs.iter().all(|o| o.as_bytes() == outputs[0].as_bytes());
    outcome(identical, format!("4 runs (threads 1, 1, 8, 8), seed 0: byte-identical = {identical}, {} bytes", outputs[0].len()))
}

fn main() {
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        println!("{} criterion {n}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3());
    report(4, criterion_4());

    let start = Instant::now();
    let (sys, orbit) = model(ModelKind::BouncingBall, None);
    let runs: Vec<Certification> = (0..5)
        .map(|seed| test_delta(sys.as_ref(), &orbit, &IntegratorConfig::default(), &CertifyConfig::default(), seed).unwrap())
        .collect();
    let certify_secs = start.elapsed().as_secs_f64();
    let certified = Certified { sys, runs };
    report(5, criterion_5(&certified, certify_secs));
    report(6, criterion_6(&certified.runs[0]));
    report(7, criterion_7(&certified));
    report(8, criterion_8(&certified.runs[0]));
    report(9, criterion_9());
    report(10, criterion_10(certified.sys.as_ref(), &orbit));

    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        if std::env::var("DELTACERT_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
