//! Sampled verification of the barrier condition
//! `min_d H_δ(P_d(x)) ≥ (1 − γ_b) H_δ(x)` with `H_δ(x) = δ² − ‖x̃‖²`.

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{d_grid, CertifyError};
use crate::hybrid::{self, HybridSystem, IntegratorConfig};
use crate::poincare;
use crate::sampling::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    /// Barrier rate `γ_b ∈ (0, 1]`.
    pub gamma_b: f64,
    /// Samples `N` per verification.
    pub samples: usize,
    pub epsilon: f64,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig { gamma_b: 0.5, samples: 200, epsilon: 0.05, grid_points: 11, seed: 0 }
    }
}

impl BarrierConfig {
    pub fn validate(&self) -> Result<(), CertifyError> {
        if !(self.gamma_b > 0.0 && self.gamma_b <= 1.0) {
            return Err(CertifyError::DegenerateConfig(format!("gamma_b must lie in (0, 1], got {}", self.gamma_b)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(CertifyError::DegenerateConfig(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if self.samples == 0 || self.grid_points == 0 {
            return Err(CertifyError::DegenerateConfig("samples and grid_points must be positive".into()));
        }
        Ok(())
    }
}

/// `1 − (1 − ε)^N`.
pub fn barrier_confidence(epsilon: f64, n: usize) -> f64 {
    let n = i32::try_from(n).unwrap_or(i32::MAX);
    1.0 - (1.0 - epsilon).powi(n)
}

/// `[d_δ⁻, d_δ⁺] = ±δ‖∇h(x*)‖` with the gradient taken in scaled
/// coordinates. Exact when `h` is affine.
pub fn guard_span(sys: &dyn HybridSystem, x_star: &DVector<f64>, delta: f64) -> (f64, f64) {
    let grad = sys
        .guard_gradient(x_star.as_slice())
        .unwrap_or_else(|| hybrid::guard_gradient_fd(sys, x_star.as_slice()));
    let norm = grad.iter().zip(sys.state_scale()).map(|(g, s)| (g * s).powi(2)).sum::<f64>().sqrt();
    (-delta * norm, delta * norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierVerificationReport {
    pub delta: f64,
    pub gamma_b: f64,
    pub samples: usize,
    pub epsilon: f64,
    pub guard_span: [f64; 2],
    pub grid_points: usize,
    /// `r*_N = min_i r_i` of the 0/1 indicators.
    pub min_indicator: u8,
    pub passed_samples: usize,
    /// `min_i [min_d H_δ(P_d(x_i)) − (1 − γ_b) H_δ(x_i)]`; `−∞` when a sample
    /// left the map's domain.
    pub worst_margin: f64,
    /// Every sampled indicator is 1.
    pub pass: bool,
    pub confidence: f64,
    pub seed: u64,
}

fn barrier_h(delta: f64, x_star: &DVector<f64>, scale: &[f64], x: &DVector<f64>) -> f64 {
    let r2: f64 = x.iter().zip(x_star.iter()).zip(scale).map(|((xi, si), ci)| ((xi - si) / ci).powi(2)).sum();
    delta * delta - r2
}

fn verify(
    sys: &dyn HybridSystem,
    x_star: &DVector<f64>,
    delta: f64,
    integ: &IntegratorConfig,
    cfg: &BarrierConfig,
    group: u64,
) -> BarrierVerificationReport {
    let n = sys.dim();
    let scale = sys.state_scale();
    let scale_v = DVector::from_column_slice(&scale);
    let (lo, hi) = guard_span(sys, x_star, delta);
    let grid: Vec<f64> = d_grid(1.0, cfg.grid_points).into_iter().map(|t| 0.5 * (lo + hi) + 0.5 * (hi - lo) * t).collect();
    let margins: Vec<f64> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = sampling::stream(cfg.seed, Purpose::BarrierInner, group, i);
            let u = sampling::sample_ball(n, delta, &mut rng);
            let x = x_star + u.component_mul(&scale_v);
            let h0 = barrier_h(delta, x_star, &scale, &x);
            let mut worst = f64::INFINITY;
            for &d in &grid {
                let h1 = match poincare::poincare_extended(sys, &x, d, integ) {
                    Ok(next) => barrier_h(delta, x_star, &scale, &next),
                    Err(_) => f64::NEG_INFINITY,
                };
                worst = worst.min(h1);
                if worst == f64::NEG_INFINITY {
                    break;
                }
            }
            let m = worst - (1.0 - cfg.gamma_b) * h0;
            if m.is_nan() {
                f64::NEG_INFINITY
            } else {
                m
            }
        })
        .collect();
    let passed_samples = margins.iter().filter(|m| **m >= 0.0).count();
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = passed_samples == cfg.samples;
    BarrierVerificationReport {
        delta,
        gamma_b: cfg.gamma_b,
        samples: cfg.samples,
        epsilon: cfg.epsilon,
        guard_span: [lo, hi],
        grid_points: cfg.grid_points,
        min_indicator: u8::from(pass),
        passed_samples,
        worst_margin,
        pass,
        confidence: barrier_confidence(cfg.epsilon, cfg.samples),
        seed: cfg.seed,
    }
}

/// Samples `x′ ~ U(B_δ(x*))`, approximates the set-valued map by the grid
/// over the guard span and scores each sample by the barrier condition.
pub fn barrier_verify_fixed_delta(
    sys: &dyn HybridSystem,
    x_star: &DVector<f64>,
    delta: f64,
    integ: &IntegratorConfig,
    cfg: &BarrierConfig,
) -> Result<BarrierVerificationReport, CertifyError> {
    cfg.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(CertifyError::DegenerateConfig(format!("delta must be positive, got {delta}")));
    }
    Ok(verify(sys, x_star, delta, integ, cfg, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierMaxDeltaReport {
    /// Largest accepted δ′; 0 when `empty`.
    pub delta_star_n: f64,
    pub empty: bool,
    pub confidence: f64,
    pub delta_range: [f64; 2],
    pub outer_samples: usize,
    pub inner_samples: usize,
    pub accepted: Vec<f64>,
    pub reports: Vec<BarrierVerificationReport>,
}

/// Draws `δ′ ~ U(δ_range)`, keeps those whose fixed-δ verification passes
/// and returns the largest.
pub fn barrier_max_delta(
    sys: &dyn HybridSystem,
    x_star: &DVector<f64>,
    delta_range: (f64, f64),
    outer_samples: usize,
    integ: &IntegratorConfig,
    cfg: &BarrierConfig,
) -> Result<BarrierMaxDeltaReport, CertifyError> {
    cfg.validate()?;
    let (lo, hi) = delta_range;
    if !(lo >= 0.0 && hi > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(CertifyError::DegenerateConfig(format!("delta range must satisfy 0 <= lo <= hi, hi > 0, got [{lo}, {hi}]")));
    }
    if outer_samples == 0 {
        return Err(CertifyError::DegenerateConfig("outer_samples must be positive".into()));
    }
    let mut reports = Vec::with_capacity(outer_samples);
    let mut accepted = Vec::new();
    for j in 0..outer_samples as u64 {
        let mut rng = sampling::stream(cfg.seed, Purpose::BarrierOuter, 0, j);
        let delta = if lo == hi { lo } else { lo + (hi - lo) * rng.random::<f64>() };
        if delta <= 0.0 {
            continue;
        }
        let report = verify(sys, x_star, delta, integ, cfg, j + 1);
        if report.pass {
            accepted.push(delta);
        }
        reports.push(report);
    }
    let empty = accepted.is_empty();
    let delta_star_n = accepted.iter().copied().fold(0.0, f64::max);
    if empty {
        log::warn!("no sampled delta in [{lo}, {hi}] passed the barrier check");
    }
    Ok(BarrierMaxDeltaReport {
        delta_star_n,
        empty,
        confidence: barrier_confidence(cfg.epsilon, outer_samples),
        delta_range: [lo, hi],
        outer_samples,
        inner_samples: cfg.samples,
        accepted,
        reports,
    })
}
