//! Two orbits with the same spectrum and different robustness.
//!
//! The fragile ball shares the plain ball's flow, guard and (near the orbit)
//! reset, so its return map has the same linearization. Its reset is only
//! defined inside a velocity band, which caps the certifiable δ.

use std::collections::BTreeMap;

use deltacert::certify::{test_delta, CertifyConfig};
use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    let cases: [(ModelKind, Option<f64>); 4] = [
        (ModelKind::BouncingBall, None),
        (ModelKind::FragileBall, Some(0.03)),
        (ModelKind::FragileBall, Some(0.01)),
        (ModelKind::FragileBall, Some(1e-3)),
    ];
    println!("{:<14} {:>8} {:>12} {:>8} {:>6}", "model", "band", "rho_spec", "delta*", "chi*");
    for (kind, band) in cases {
        let mut params = BTreeMap::new();
        if let Some(b) = band {
            params.insert("band".to_string(), b);
        }
        let model = build(kind, &params)?;
        let sys = model.system.as_ref();
        let orbit = find_fixed_point(sys, &model.initial_guess, &integ, &FixedPointConfig::default())?;
        let cert = test_delta(sys, &orbit, &integ, &CertifyConfig::default(), 0)?.certificate;
        let band = band.map_or("-".to_string(), |b| b.to_string());
        println!(
            "{:<14} {:>8} {:>12.8} {:>8} {:>6}",
            kind.to_string(),
            band,
            orbit.spectral_radius,
            cert.delta_star,
            cert.chi_star
        );
    }
    Ok(())
}
