//! Certify the bouncing-ball orbit and print the E-ISS constants.

use std::collections::BTreeMap;

use deltacert::certify::{check_invariance, test_delta, CertifyConfig, InvarianceConfig};
use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    let model = build(ModelKind::BouncingBall, &BTreeMap::new())?;
    let sys = model.system.as_ref();
    let orbit = find_fixed_point(sys, &model.initial_guess, &integ, &FixedPointConfig::default())?;

    let result = test_delta(sys, &orbit, &integ, &CertifyConfig::default(), 0)?;
    let cert = &result.certificate;
    println!("delta* = {}, chi* = {} after {} trials", cert.delta_star, cert.chi_star, cert.search.trials);
    println!("k1 = {:.4}, k2 = {:.4}", cert.k1, cert.k2);
    if let Some(tc) = cert.constants {
        println!("M = {:.4}, alpha = {:.6}, gamma = {:.4}", tc.m, tc.alpha, tc.gamma);
        println!("delta_max = {:.5} with rho = {:.5} (estimated)", tc.delta_max, cert.rho.value);
    }

    let inv = check_invariance(sys, &result.lyapunov, cert.delta_star, &integ, &InvarianceConfig::default())?;
    println!("invariance: worst excess {:e} over {} boundary samples", inv.worst_excess, inv.samples);

    // the last few trials of the search
    for t in result.trace.iter().rev().take(5).rev() {
        println!("  delta {:.3} chi {:>4} margin {:+.3e} {}", t.delta, t.chi, t.worst_margin, if t.pass { "pass" } else { "fail" });
    }
    Ok(())
}
