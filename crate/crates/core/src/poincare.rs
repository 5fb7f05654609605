//! The extended Poincaré map `P_d(x⁻) = φ_{T_e(x⁻,d)}(Δ(x⁻))`, periodic
//! orbits as its fixed points, and the disturbed discrete-time system
//! `x_{k+1} = P(x_k, d_k)`.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hybrid::{self, HybridError, HybridSystem, Impact, IntegratorConfig};
use crate::linalg::{self, LinalgError};
use crate::sampling::{self, Purpose};

pub use crate::linalg::spectral_radius;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoincareError {
    #[error(transparent)]
    Hybrid(#[from] HybridError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("Newton system is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("could not project the initial guess onto the guard (|h| = {0:e})")]
    Projection(f64),
    #[error("disturbance {value} at index {index} exceeds bound {delta}")]
    DisturbanceOutOfBounds { index: usize, value: f64, delta: f64 },
}

/// Applies the reset and flows to the next descending crossing of `h = d`.
pub fn poincare_impact(
    sys: &dyn HybridSystem,
    x_minus: &DVector<f64>,
    d: f64,
    cfg: &IntegratorConfig,
) -> Result<Impact, HybridError> {
    let x_plus = hybrid::apply_reset(sys, x_minus)?;
    hybrid::impact(sys, &x_plus, d, cfg)
}

/// `P_d(x⁻)`; errors mean `x⁻` lies outside the map's domain.
pub fn poincare_extended(
    sys: &dyn HybridSystem,
    x_minus: &DVector<f64>,
    d: f64,
    cfg: &IntegratorConfig,
) -> Result<DVector<f64>, HybridError> {
    poincare_impact(sys, x_minus, d, cfg).map(|hit| hit.state)
}

/// Guard levels `d_k`, each within `[-δ, δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSequence {
    delta: f64,
    values: Vec<f64>,
}

impl DisturbanceSequence {
    pub fn new(delta: f64, values: Vec<f64>) -> Result<Self, PoincareError> {
        for (index, &value) in values.iter().enumerate() {
            if !(value.abs() <= delta) {
                return Err(PoincareError::DisturbanceOutOfBounds { index, value, delta });
            }
        }
        Ok(DisturbanceSequence { delta, values })
    }

    pub fn zeros(len: usize) -> Self {
        DisturbanceSequence { delta: 0.0, values: vec![0.0; len] }
    }

    /// i.i.d. `Uniform(-δ, δ)` draws.
    pub fn uniform<R: Rng + ?Sized>(delta: f64, len: usize, rng: &mut R) -> Self {
        let values = (0..len)
            .map(|_| if delta > 0.0 { rng.random_range(-delta..=delta) } else { 0.0 })
            .collect();
        DisturbanceSequence { delta, values }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutFailure {
    /// Index `k` of the step `x_k -> x_{k+1}` that failed.
    pub step: usize,
    pub error: HybridError,
}

/// Iterates of the disturbed return map. A rollout that leaves the map's
/// domain stops early and records where.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// `x_1, …, x_K` (fewer on failure).
    pub states: Vec<DVector<f64>>,
    pub times: Vec<f64>,
    pub failure: Option<RolloutFailure>,
}

impl Rollout {
    pub fn truncated(&self) -> bool {
        self.failure.is_some()
    }
}

pub fn rollout(
    sys: &dyn HybridSystem,
    x0: &DVector<f64>,
    ds: &DisturbanceSequence,
    cfg: &IntegratorConfig,
) -> Rollout {
    let mut states = Vec::with_capacity(ds.len());
    let mut times = Vec::with_capacity(ds.len());
    let mut x = x0.clone();
    for (step, &d) in ds.values().iter().enumerate() {
        match poincare_impact(sys, &x, d, cfg) {
            Ok(hit) => {
                times.push(hit.time);
                x = hit.state;
                states.push(x.clone());
            }
            Err(error) => {
                return Rollout { states, times, failure: Some(RolloutFailure { step, error }) };
            }
        }
    }
    Rollout { states, times, failure: None }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicOrbit {
    /// Pre-impact state on `S_0`.
    pub fixed_point: DVector<f64>,
    pub period: f64,
    /// `DP(x*, 0)` in the model's state ordering.
    pub jacobian: DMatrix<f64>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub spectral_radius: f64,
    pub residual: f64,
    pub newton_iterations: usize,
}

impl PeriodicOrbit {
    pub fn is_stable(&self) -> bool {
        self.spectral_radius < 1.0
    }

    pub fn eigenvalue_moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|z| z.norm()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointConfig {
    /// Converged when `‖P₀(x) − x‖ ≤ tol·(1 + ‖x‖)`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub fd_step: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { tol: 1e-9, max_iter: 50, max_backtracks: 8, fd_step: 1e-6 }
    }
}

/// Moves `x` onto `h = 0` along the guard gradient.
fn project_to_guard(
    sys: &dyn HybridSystem,
    x: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>, PoincareError> {
    let mut x = x.clone();
    for _ in 0..50 {
        let h = sys.guard(x.as_slice());
        if h.abs() <= tol {
            return Ok(x);
        }
        let grad = sys
            .guard_gradient(x.as_slice())
            .unwrap_or_else(|| hybrid::guard_gradient_fd(sys, x.as_slice()));
        let g2: f64 = grad.iter().map(|v| v * v).sum();
        if g2 == 0.0 {
            return Err(PoincareError::Projection(h));
        }
        for (xi, gi) in x.iter_mut().zip(&grad) {
            *xi -= h * gi / g2;
        }
    }
    let h = sys.guard(x.as_slice());
    if h.abs() <= tol {
        Ok(x)
    } else {
        Err(PoincareError::Projection(h))
    }
}

fn jacobian_fd(
    sys: &dyn HybridSystem,
    x: &DVector<f64>,
    fd_step: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>, HybridError> {
    let n = x.len();
    let columns: Vec<Result<DVector<f64>, HybridError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let h = fd_step * (1.0 + x[i].abs());
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let fu = poincare_extended(sys, &up, 0.0, cfg)?;
            let fd = poincare_extended(sys, &down, 0.0, cfg)?;
            Ok((fu - fd) / (2.0 * h))
        })
        .collect();
    let mut jac = DMatrix::zeros(n, n);
    for (i, col) in columns.into_iter().enumerate() {
        jac.set_column(i, &col?);
    }
    Ok(jac)
}

/// `A = DP(x*, 0)` by central differences. Domain errors shrink the step by
/// 10 down to `1e-9` before giving up.
pub fn linearize(
    sys: &dyn HybridSystem,
    x_star: &DVector<f64>,
    fd_step: f64,
    cfg: &IntegratorConfig,
) -> Result<DMatrix<f64>, PoincareError> {
    let mut step = fd_step;
    loop {
        match jacobian_fd(sys, x_star, step, cfg) {
            Ok(jac) => return Ok(jac),
            Err(err) => {
                let next = step / 10.0;
                if next < 1e-9 * (1.0 - 1e-12) {
                    return Err(err.into());
                }
                log::debug!("linearize: fd step {step:e} left the map domain ({err}); retrying");
                step = next;
            }
        }
    }
}

/// Damped Newton shooting on `F(x) = P₀(x) − x`.
pub fn find_fixed_point(
    sys: &dyn HybridSystem,
    x_guess: &DVector<f64>,
    cfg: &IntegratorConfig,
    fp: &FixedPointConfig,
) -> Result<PeriodicOrbit, PoincareError> {
    cfg.validate()?;
    let mut x = project_to_guard(sys, x_guess, cfg.event_tol)?;
    let residual_of = |x: &DVector<f64>| -> Result<DVector<f64>, HybridError> {
        Ok(poincare_extended(sys, x, 0.0, cfg)? - x)
    };
    let mut f = residual_of(&x)?;
    let mut iterations = 0;
    loop {
        let fnorm = f.norm();
        if fnorm <= fp.tol * (1.0 + x.norm()) {
            break;
        }
        if iterations >= fp.max_iter {
            return Err(PoincareError::NoConvergence { iterations, residual: fnorm });
        }
        let jac = linearize(sys, &x, fp.fd_step, cfg)? - DMatrix::identity(x.len(), x.len());
        let step = match jac.clone().lu().solve(&(-&f)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                // Rank-deficient: minimum-norm least-squares step.
                let svd = jac.svd(true, true);
                match svd.solve(&(-&f), 1e-12) {
                    Ok(s) if s.iter().all(|v| v.is_finite()) && s.norm() > 0.0 => s,
                    _ => return Err(PoincareError::SingularJacobian { iteration: iterations }),
                }
            }
        };
        iterations += 1;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=fp.max_backtracks {
            let trial = &x + &step * lambda;
            if let Ok(ft) = residual_of(&trial) {
                if ft.norm() < fnorm {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, fnext)) => {
                x = xn;
                f = fnext;
            }
            None => {
                return Err(PoincareError::NoConvergence { iterations, residual: fnorm });
            }
        }
        log::debug!("newton iteration {iterations}: residual {:e}", f.norm());
    }
    let residual = f.norm();
    let post = hybrid::apply_reset(sys, &x)?;
    let period = hybrid::time_to_impact(sys, &post, 0.0, cfg)?;
    let jacobian = linearize(sys, &x, fp.fd_step, cfg)?;
    let eigenvalues = linalg::eigenvalues(&jacobian)?;
    let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(PeriodicOrbit {
        fixed_point: x,
        period,
        jacobian,
        eigenvalues,
        spectral_radius,
        residual,
        newton_iterations: iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainProbeConfig {
    pub start_radius: f64,
    pub growth: f64,
    pub samples: usize,
    pub max_radius: f64,
}

impl Default for DomainProbeConfig {
    fn default() -> Self {
        DomainProbeConfig { start_radius: 1e-3, growth: 1.5, samples: 32, max_radius: 100.0 }
    }
}

/// Empirical radius `ρ` of the ball `B_ρ(x*)` on which `P₀` is defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainEstimate {
    /// Last radius at which every sample mapped successfully; 0 when the
    /// first radius already fails.
    pub radius: f64,
    /// The search hit `max_radius` without a failure.
    pub capped: bool,
}

/// Expands a sphere around `x*` (in scaled coordinates) until some sample
/// leaves the map's domain.
pub fn estimate_domain_radius(
    sys: &dyn HybridSystem,
    x_star: &DVector<f64>,
    cfg: &IntegratorConfig,
    probe: &DomainProbeConfig,
    seed: u64,
) -> DomainEstimate {
    let scale = sys.state_scale();
    let n = x_star.len();
    let mut radius = probe.start_radius;
    let mut last_ok = 0.0;
    let mut shell = 0u64;
    while radius <= probe.max_radius {
        let all_ok = (0..probe.samples as u64).into_par_iter().all(|i| {
            let mut rng = sampling::stream(seed, Purpose::DomainProbe, shell, i);
            let u = sampling::sample_sphere(n, radius, &mut rng);
            let x = x_star + u.component_mul(&DVector::from_column_slice(&scale));
            poincare_extended(sys, &x, 0.0, cfg).is_ok()
        });
        if !all_ok {
            return DomainEstimate { radius: last_ok, capped: false };
        }
        last_ok = radius;
        radius *= probe.growth;
        shell += 1;
    }
    DomainEstimate { radius: last_ok, capped: true }
}
