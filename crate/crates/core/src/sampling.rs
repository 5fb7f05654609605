//! Uniform sampling on spheres and in balls, and per-index RNG streams.
//!
//! Every random draw in the crate comes from a stream keyed by
//! `(root seed, purpose, index)`, so results do not depend on how work is
//! split across threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent stream purposes; mixed into the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    TrialSphere = 1,
    TrialAnnulus = 2,
    Audit = 3,
    IssInit = 4,
    IssDisturbance = 5,
    Invariance = 6,
    BarrierInner = 7,
    BarrierOuter = 8,
    DomainProbe = 9,
    Simulate = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for work item `index` of `purpose` under `seed`. `group` separates
/// batches that share a purpose (e.g. one trial of the δ/χ search).
pub fn stream(seed: u64, purpose: Purpose, group: u64, index: u64) -> ChaCha8Rng {
    let key = splitmix64(splitmix64(seed ^ (purpose as u64).rotate_left(56)) ^ group);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Uniform point on the sphere of `radius` in `R^n`.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    assert!(n >= 1, "dimension must be positive");
    if radius == 0.0 {
        return DVector::zeros(n);
    }
    loop {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            return g * (radius / norm);
        }
    }
}

/// Uniform point in the closed ball of `radius` in `R^n`.
pub fn sample_ball<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let dir = sample_sphere(n, 1.0, rng);
    let u: f64 = rng.random();
    dir * (radius * u.powf(1.0 / n as f64))
}
