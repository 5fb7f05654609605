//! Sampled barrier check at a fixed δ and the max-δ search.

use std::collections::BTreeMap;

use deltacert::certify::{barrier_confidence, barrier_max_delta, barrier_verify_fixed_delta, BarrierConfig};
use deltacert::hybrid::IntegratorConfig;
use deltacert::models::{build, ModelKind};
use deltacert::poincare::{find_fixed_point, FixedPointConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let integ = IntegratorConfig::default();
    let model = build(ModelKind::BouncingBall, &BTreeMap::new())?;
    let sys = model.system.as_ref();
    let orbit = find_fixed_point(sys, &model.initial_guess, &integ, &FixedPointConfig::default())?;
    let cfg = BarrierConfig { samples: 100, ..BarrierConfig::default() };

    println!("confidence for eps = 0.05, N = 100: {:.6}", barrier_confidence(0.05, 100));

    for delta in [0.006, 0.02] {
        let r = barrier_verify_fixed_delta(sys, &orbit.fixed_point, delta, &integ, &cfg)?;
        println!(
            "delta {delta}: {}/{} samples pass, worst margin {:+.3e}",
            r.passed_samples, r.samples, r.worst_margin
        );
    }

    let max = barrier_max_delta(sys, &orbit.fixed_point, (0.0, 0.05), 20, &integ, &cfg)?;
    if max.empty {
        println!("max-delta: no sampled delta passed");
    } else {
        println!("max-delta: delta*_N = {}", max.delta_star_n);
    }
    Ok(())
}
