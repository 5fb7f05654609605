//! Passive compass gait down a shallow slope: the gait, its stability and a
//! 100-step walk over randomly perturbed ground.

use std::collections::BTreeMap;

use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, rollout, DisturbanceSequence, FixedPointConfig};
use deltacert::sampling::{stream, Purpose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    let model = build(ModelKind::CompassGait, &BTreeMap::new())?;
    let sys = model.system.as_ref();
    let orbit = find_fixed_point(sys, &model.initial_guess, &integ, &FixedPointConfig::default())?;
    println!("step period {:.6} s, |eig| {:?}", orbit.period, orbit.eigenvalue_moduli());

    let delta = 2e-3;
    let ds = DisturbanceSequence::uniform(delta, 100, &mut stream(0, Purpose::Simulate, 0, 0));
    let walk = rollout(sys, &orbit.fixed_point, &ds, &integ);
    let worst = walk
        .states
        .iter()
        .map(|x| (x - &orbit.fixed_point).amax())
        .fold(0.0, f64::max);
    println!("{} steps with |d_k| <= {delta} m, max deviation {worst:.3e}", walk.states.len());
    if let Some(f) = walk.failure {
        println!("fell at step {}: {}", f.step, f.error);
    }
    Ok(())
}
