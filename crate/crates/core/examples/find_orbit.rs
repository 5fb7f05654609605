//! Locate the bouncing-ball and compass-gait orbits and print their return
//! map spectra.

use std::collections::BTreeMap;

use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    for kind in [ModelKind::BouncingBall, ModelKind::CompassGait] {
        let model = build(kind, &BTreeMap::new())?;
        let orbit = find_fixed_point(model.system.as_ref(), &model.initial_guess, &integ, &FixedPointConfig::default())?;
        println!("{kind}");
        println!("  x*      {:?}", orbit.fixed_point.as_slice());
        println!("  T       {:.9} s", orbit.period);
        println!("  |eig|   {:?}", orbit.eigenvalue_moduli());
        println!("  newton  {} iterations, residual {:e}", orbit.newton_iterations, orbit.residual);
    }
    Ok(())
}
