//! Empirical checks of a certificate: the E-ISS bound along disturbed
//! rollouts, and forward invariance of the sublevel set `Ω_{r(δ)}`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{d_grid, theorem_constants_unchecked, CertifyError, DeltaRobustnessCertificate, TheoremConstants};
use crate::hybrid::{HybridSystem, IntegratorConfig};
use crate::linalg;
use crate::lyapunov::{self, RobustLyapunovCertificate};
use crate::poincare::{self, DisturbanceSequence, RolloutFailure};
use crate::sampling::{self, Purpose};

/// Where rollouts start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitDistribution {
    /// Uniform in the certified set `W = Ω_{r(δ)}`.
    Sublevel,
    /// Exactly at `x*`.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IssConfig {
    pub rollouts: usize,
    /// Steps `K` per rollout.
    pub steps: usize,
    pub seed: u64,
    /// Disturbance bound to use instead of the certified `δ*`.
    pub delta_override: Option<f64>,
    pub init: InitDistribution,
    /// Draw `d_k ≡ 0` instead of `U(−δ, δ)`.
    pub zero_disturbance: bool,
}

impl Default for IssConfig {
    fn default() -> Self {
        IssConfig {
            rollouts: 1000,
            steps: 50,
            seed: 0,
            delta_override: None,
            init: InitDistribution::Sublevel,
            zero_disturbance: false,
        }
    }
}

/// One row of the per-rollout trace (`k ≥ 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssRecord {
    pub rollout_id: usize,
    pub k: usize,
    pub dist_to_xstar: f64,
    pub bound_value: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    pub delta: f64,
    pub rollouts: usize,
    pub steps: usize,
    pub constants: TheoremConstants,
    /// Records with `‖x̃_k‖` above the bound.
    pub violations: usize,
    pub violating_rollouts: usize,
    /// Rollouts that left the map's domain before `K` steps.
    pub truncations: usize,
    /// Earliest failing step over truncated rollouts.
    pub first_truncation_step: Option<usize>,
    /// Smallest `bound − ‖x̃_k‖` over all records; `+∞` when there are none.
    pub worst_slack: f64,
    pub seed: u64,
    #[serde(skip)]
    pub records: Vec<IssRecord>,
}

impl IssReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.truncations == 0
    }
}

/// `P^{-1/2}`, mapping the unit-`V` sphere onto the ellipsoid boundary.
pub(crate) fn inverse_sqrt(p: &DMatrix<f64>) -> Result<DMatrix<f64>, CertifyError> {
    let eig = linalg::symmetric_eigen(p).map_err(lyapunov::LyapunovError::from)?;
    if !(eig.values[0] > 0.0) {
        return Err(lyapunov::LyapunovError::NotPositiveDefinite(eig.values[0]).into());
    }
    let d = DMatrix::from_diagonal(&DVector::from_iterator(eig.values.len(), eig.values.iter().map(|v| v.powf(-0.5))));
    Ok(&eig.vectors * d * eig.vectors.transpose())
}

/// Rolls out one disturbance sequence and scores it against the bound.
pub fn iss_rollout(
    sys: &dyn HybridSystem,
    lyap: &RobustLyapunovCertificate,
    constants: &TheoremConstants,
    delta: f64,
    rollout_id: usize,
    x0: &DVector<f64>,
    ds: &DisturbanceSequence,
    integ: &IntegratorConfig,
) -> (Vec<IssRecord>, Option<RolloutFailure>) {
    let run = poincare::rollout(sys, x0, ds, integ);
    let dist0 = lyap.scaled_distance(x0);
    let records = run
        .states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let k = i + 1;
            let dist = lyap.scaled_distance(x);
            let bound = constants.m * constants.alpha.powi(k as i32) * dist0 + constants.gamma * delta;
            IssRecord { rollout_id, k, dist_to_xstar: dist, bound_value: bound, violated: !(dist <= bound) }
        })
        .collect();
    (records, run.failure)
}

/// Rolls out `rollouts` trajectories of `K` steps from `W` under i.i.d.
/// `d_k ~ U(−δ, δ)` and checks `‖x̃_k‖ ≤ M αᵏ ‖x̃₀‖ + γδ` at every step.
pub fn verify_iss_bound(
    sys: &dyn HybridSystem,
    certificate: &DeltaRobustnessCertificate,
    integ: &IntegratorConfig,
    cfg: &IssConfig,
) -> Result<IssReport, CertifyError> {
    let delta = cfg.delta_override.unwrap_or(certificate.delta_star);
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(CertifyError::DegenerateConfig(format!("nothing to verify at delta = {delta}")));
    }
    let lyap = certificate.lyapunov()?;
    if lyap.dim() != sys.dim() {
        return Err(CertifyError::BadConstants("certificate dimension differs from the model".into()));
    }
    let rho = certificate.rho.value.max(f64::MIN_POSITIVE);
    let constants = theorem_constants_unchecked(lyap.k1, lyap.k2, lyap.k3, lyap.c, lyap.chi, delta, rho)?;
    let p_inv_sqrt = inverse_sqrt(&lyap.p)?;
    let n = sys.dim();

    let per_rollout: Vec<(Vec<IssRecord>, Option<RolloutFailure>)> = (0..cfg.rollouts)
        .into_par_iter()
        .map(|j| {
            let x0 = match cfg.init {
                InitDistribution::Center => lyap.origin.clone(),
                InitDistribution::Sublevel => {
                    let mut rng = sampling::stream(cfg.seed, Purpose::IssInit, 0, j as u64);
                    let u = sampling::sample_ball(n, constants.r_delta.sqrt(), &mut rng);
                    lyap.from_deviation(&(&p_inv_sqrt * u))
                }
            };
            let ds = if cfg.zero_disturbance {
                DisturbanceSequence::zeros(cfg.steps)
            } else {
                let mut rng = sampling::stream(cfg.seed, Purpose::IssDisturbance, 0, j as u64);
                DisturbanceSequence::uniform(delta, cfg.steps, &mut rng)
            };
            iss_rollout(sys, &lyap, &constants, delta, j, &x0, &ds, integ)
        })
        .collect();

    let mut records = Vec::with_capacity(cfg.rollouts * cfg.steps);
    let mut violating_rollouts = 0;
    let mut truncations = 0;
    let mut first_truncation_step: Option<usize> = None;
    for (recs, failure) in per_rollout {
        if recs.iter().any(|r| r.violated) {
            violating_rollouts += 1;
        }
        if let Some(f) = failure {
            truncations += 1;
            first_truncation_step = Some(first_truncation_step.map_or(f.step, |s| s.min(f.step)));
        }
        records.extend(recs);
    }
    let violations = records.iter().filter(|r| r.violated).count();
    let worst_slack = records.iter().map(|r| r.bound_value - r.dist_to_xstar).fold(f64::INFINITY, f64::min);
    Ok(IssReport {
        delta,
        rollouts: cfg.rollouts,
        steps: cfg.steps,
        constants,
        violations,
        violating_rollouts,
        truncations,
        first_truncation_step,
        worst_slack,
        seed: cfg.seed,
        records,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceConfig {
    pub boundary_samples: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig { boundary_samples: 256, grid_points: 11, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub delta: f64,
    pub r_delta: f64,
    pub samples: usize,
    /// Largest `V(P_d(x)) − r(δ)` over boundary samples and grid levels;
    /// `+∞` if some sample left the map's domain.
    pub worst_excess: f64,
    pub pass: bool,
}

/// Samples `∂Ω_{r(δ)}` and checks `V(P_d(x)) ≤ r(δ)` on the d-grid.
pub fn check_invariance(
    sys: &dyn HybridSystem,
    lyap: &RobustLyapunovCertificate,
    delta: f64,
    integ: &IntegratorConfig,
    cfg: &InvarianceConfig,
) -> Result<InvarianceReport, CertifyError> {
    let r_delta = lyap.k2 * (lyap.chi * delta).powf(lyap.c);
    if r_delta == 0.0 {
        // ∂Ω₀ = {x*}
        return Ok(InvarianceReport { delta, r_delta, samples: 0, worst_excess: 0.0, pass: true });
    }
    let p_inv_sqrt = inverse_sqrt(&lyap.p)?;
    let grid = d_grid(delta, cfg.grid_points);
    let n = sys.dim();
    let excess: Vec<f64> = (0..cfg.boundary_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sampling::stream(cfg.seed, Purpose::Invariance, 0, i);
            let u = sampling::sample_sphere(n, r_delta.sqrt(), &mut rng);
            let x = lyap.from_deviation(&(&p_inv_sqrt * u));
            grid.iter()
                .map(|&d| match poincare::poincare_extended(sys, &x, d, integ) {
                    Ok(next) => lyapunov::lyap_value(lyap, &next) - r_delta,
                    Err(_) => f64::INFINITY,
                })
                .map(|e| if e.is_nan() { f64::INFINITY } else { e })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let worst_excess = excess.into_iter().fold(f64::NEG_INFINITY, f64::max);
    Ok(InvarianceReport { delta, r_delta, samples: cfg.boundary_samples, worst_excess, pass: worst_excess <= 0.0 })
}
