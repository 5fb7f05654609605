//! Check the E-ISS bound on disturbed rollouts for the plain ball at its
//! certified δ, and for the fragile ball, whose sampled δ* exceeds the
//! δ_max allowed by its small domain.

use std::collections::BTreeMap;

use deltacert::certify::{test_delta, verify_iss_bound, CertifyConfig, IssConfig};
use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    let mut fragile = BTreeMap::new();
    fragile.insert("band".to_string(), 0.03);
    for (kind, params) in [(ModelKind::BouncingBall, BTreeMap::new()), (ModelKind::FragileBall, fragile)] {
        let model = build(kind, &params)?;
        let sys = model.system.as_ref();
        let orbit = find_fixed_point(sys, &model.initial_guess, &integ, &FixedPointConfig::default())?;
        let cert = test_delta(sys, &orbit, &integ, &CertifyConfig::default(), 0)?.certificate;
        let delta_max = cert.constants.map_or(0.0, |c| c.delta_max);
        println!("{kind}: delta* = {}, delta_max = {delta_max:.5}, certified = {}", cert.delta_star, cert.certified());

        let cfg = IssConfig { rollouts: 200, ..IssConfig::default() };
        let r = verify_iss_bound(sys, &cert, &integ, &cfg)?;
        println!(
            "  {} violations, {} truncated rollouts (first at step {:?}), worst slack {:+.3e}",
            r.violations, r.truncations, r.first_truncation_step, r.worst_slack
        );
    }
    Ok(())
}
