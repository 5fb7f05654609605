//! δ-robustness certification: the sampled δ/χ search for a robust Lyapunov
//! function, the constants of the resulting E-ISS bound, and empirical
//! checks of that bound, of forward invariance and of a barrier condition.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hybrid::{HybridSystem, IntegratorConfig, ModelInfo};
use crate::lyapunov::{self, LyapunovError, RobustLyapunovCertificate};
use crate::poincare::{self, DomainProbeConfig, PeriodicOrbit, PoincareError};
use crate::sampling::{self, Purpose};

pub mod barrier;
pub mod iss;

pub use crate::sampling::{sample_ball, sample_sphere};
pub use barrier::{
    barrier_confidence, barrier_max_delta, barrier_verify_fixed_delta, guard_span, BarrierConfig,
    BarrierMaxDeltaReport, BarrierVerificationReport,
};
pub use iss::{
    check_invariance, iss_rollout, verify_iss_bound, InvarianceConfig, InvarianceReport, IssConfig, IssRecord,
    IssReport,
};

/// Version tag written into every certificate.
pub const CERTIFICATE_SCHEMA: &str = "deltacert.certificate/v1";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("periodic orbit is not stable (spectral radius {0})")]
    NotStable(f64),
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("delta {delta} is not below delta_max {delta_max}")]
    HypothesisViolated { delta: f64, delta_max: f64 },
    #[error("invalid constants: {0}")]
    BadConstants(String),
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
    #[error(transparent)]
    Poincare(#[from] PoincareError),
}

/// Constants of the E-ISS bound `‖x̃_k‖ ≤ M αᵏ ‖x̃₀‖ + γδ` on `W = Ω_{r(δ)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub m: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub r_delta: f64,
    pub delta_max: f64,
    pub r1: f64,
    pub r2: f64,
}

/// Like [`theorem_constants`] but without rejecting `δ ≥ δ_max`.
pub fn theorem_constants_unchecked(
    k1: f64,
    k2: f64,
    k3: f64,
    c: f64,
    chi: f64,
    delta: f64,
    rho: f64,
) -> Result<TheoremConstants, CertifyError> {
    let finite = [k1, k2, k3, c, chi, delta, rho].iter().all(|v| v.is_finite());
    if !finite {
        return Err(CertifyError::BadConstants("constants must be finite".into()));
    }
    if !(k1 > 0.0 && k1 <= k2) {
        return Err(CertifyError::BadConstants(format!("need 0 < k1 <= k2, got {k1}, {k2}")));
    }
    if !(k3 > 0.0 && k3 < k2) {
        return Err(CertifyError::BadConstants(format!("need 0 < k3 < k2, got {k3}, {k2}")));
    }
    if !(c > 0.0 && chi > 0.0 && delta > 0.0 && rho > 0.0) {
        return Err(CertifyError::BadConstants(format!(
            "c, chi, delta, rho must be positive, got {c}, {chi}, {delta}, {rho}"
        )));
    }
    let ratio = k2 / k1;
    let m = ratio.powf(1.0 / c);
    Ok(TheoremConstants {
        m,
        alpha: (1.0 - k3 / k2).powf(1.0 / c),
        gamma: m * chi,
        r_delta: k2 * (chi * delta).powf(c),
        delta_max: (k1 / (chi.powf(c) * k2)).powf(1.0 / c) * rho,
        r1: chi * delta,
        r2: ratio.sqrt() * chi * delta,
    })
}

/// `M = (k₂/k₁)^{1/c}`, `α = (1 − k₃/k₂)^{1/c}`, `γ = Mχ`,
/// `r(δ) = k₂(χδ)^c`, `δ_max = (k₁/(χ^c k₂))^{1/c} ρ`.
pub fn theorem_constants(
    k1: f64,
    k2: f64,
    k3: f64,
    c: f64,
    chi: f64,
    delta: f64,
    rho: f64,
) -> Result<TheoremConstants, CertifyError> {
    let tc = theorem_constants_unchecked(k1, k2, k3, c, chi, delta, rho)?;
    if delta >= tc.delta_max {
        return Err(CertifyError::HypothesisViolated { delta, delta_max: tc.delta_max });
    }
    Ok(tc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub delta_step: f64,
    pub chi_step: f64,
    pub chi_max: f64,
    /// Sphere samples per (δ, χ) trial.
    pub samples: usize,
    /// Decrease constant in `V(P(x,d)) − V(x) ≤ −k‖x̃‖²`.
    pub k: f64,
    /// Points of the symmetric grid over `[−δ, δ]`, endpoints included.
    pub grid_points: usize,
    /// Also sample radii uniformly in `[r₁, r₂]`.
    pub strict_annulus: bool,
    pub annulus_samples: usize,
    /// The audit draws `audit_factor · samples` fresh sphere samples.
    pub audit_factor: usize,
    /// Safety stop for models that never fail a trial.
    pub max_trials: usize,
    pub domain_probe: DomainProbeConfig,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            delta_step: 1e-3,
            chi_step: 1.0,
            chi_max: 50.0,
            samples: 64,
            k: 0.1,
            grid_points: 11,
            strict_annulus: false,
            annulus_samples: 64,
            audit_factor: 10,
            max_trials: 100_000,
            domain_probe: DomainProbeConfig::default(),
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<(), CertifyError> {
        let bad = |msg: &str| Err(CertifyError::DegenerateConfig(msg.to_string()));
        if !(self.delta_step > 0.0 && self.delta_step.is_finite()) {
            return bad("delta_step must be positive");
        }
        if !(self.chi_step > 0.0 && self.chi_step.is_finite()) {
            return bad("chi_step must be positive");
        }
        if !(self.chi_max >= 0.0 && self.chi_max.is_finite()) {
            return bad("chi_max must be non-negative");
        }
        if self.samples == 0 {
            return bad("samples must be positive");
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return bad("k must lie in (0, 1)");
        }
        if self.grid_points == 0 {
            return bad("grid_points must be positive");
        }
        if self.strict_annulus && self.annulus_samples == 0 {
            return bad("annulus_samples must be positive in strict mode");
        }
        if self.max_trials == 0 {
            return bad("max_trials must be positive");
        }
        Ok(())
    }
}

/// Symmetric grid of `n` levels over `[−δ, δ]`; `n = 1` is `{0}`.
pub fn d_grid(delta: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    let span = (n - 1) as f64;
    (0..n)
        .map(|i| match i {
            0 => -delta,
            i if i == n - 1 => delta,
            i => delta * (2.0 * i as f64 - span) / span,
        })
        .collect()
}

fn nan_to_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn ordered_min(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().map(nan_to_neg_inf).fold(f64::INFINITY, f64::min)
}

/// Worst decrease margin over the grid at one state.
pub fn grid_margin(
    sys: &dyn HybridSystem,
    cert: &RobustLyapunovCertificate,
    x: &DVector<f64>,
    grid: &[f64],
    k: f64,
    integ: &IntegratorConfig,
) -> f64 {
    let mut worst = f64::INFINITY;
    for &d in grid {
        let m = nan_to_neg_inf(lyapunov::decrease_margin(sys, cert, x, d, k, integ));
        worst = worst.min(m);
        if worst == f64::NEG_INFINITY {
            break;
        }
    }
    worst
}

/// Everything one sampled (δ, χ) check needs.
pub struct TrialContext<'a> {
    pub sys: &'a dyn HybridSystem,
    pub cert: &'a RobustLyapunovCertificate,
    pub integ: &'a IntegratorConfig,
    pub cfg: &'a CertifyConfig,
    pub seed: u64,
}

impl TrialContext<'_> {
    /// Worst margin over `samples` sphere points of radius `χδ` (stream
    /// `group`) and, in strict mode, the annulus `[r₁, r₂]`.
    pub fn margin(&self, delta: f64, chi: f64, group: u64) -> f64 {
        let n = self.sys.dim();
        let grid = d_grid(delta, self.cfg.grid_points);
        let radius = chi * delta;
        let sphere: Vec<f64> = (0..self.cfg.samples as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = sampling::stream(self.seed, Purpose::TrialSphere, group, i);
                let u = sampling::sample_sphere(n, radius, &mut rng);
                grid_margin(self.sys, self.cert, &self.cert.from_deviation(&u), &grid, self.cfg.k, self.integ)
            })
            .collect();
        let mut worst = ordered_min(sphere);
        if self.cfg.strict_annulus {
            let r2 = (self.cert.k2 / self.cert.k1).sqrt() * radius;
            let annulus: Vec<f64> = (0..self.cfg.annulus_samples as u64)
                .into_par_iter()
                .map(|i| {
                    use rand::Rng;
                    let mut rng = sampling::stream(self.seed, Purpose::TrialAnnulus, group, i);
                    let r = radius + (r2 - radius) * rng.random::<f64>();
                    let u = sampling::sample_sphere(n, r, &mut rng);
                    grid_margin(self.sys, self.cert, &self.cert.from_deviation(&u), &grid, self.cfg.k, self.integ)
                })
                .collect();
            worst = worst.min(ordered_min(annulus));
        }
        worst
    }

    /// Fresh audit batch of `audit_factor · samples` sphere points.
    pub fn audit(&self, delta: f64, chi: f64) -> AuditSummary {
        let n = self.sys.dim();
        let grid = d_grid(delta, self.cfg.grid_points);
        let count = self.cfg.audit_factor * self.cfg.samples;
        let margins: Vec<f64> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = sampling::stream(self.seed, Purpose::Audit, 0, i);
                let u = sampling::sample_sphere(n, chi * delta, &mut rng);
                grid_margin(self.sys, self.cert, &self.cert.from_deviation(&u), &grid, self.cfg.k, self.integ)
            })
            .collect();
        let worst_margin = ordered_min(margins);
        AuditSummary { samples: count, worst_margin, pass: worst_margin >= 0.0 }
    }
}

/// One evaluated (δ, χ) trial of the search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub delta: f64,
    pub chi: f64,
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub samples: usize,
    pub worst_margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoEstimate {
    pub value: f64,
    pub capped: bool,
    /// Always `"estimated"`: the radius comes from sampling, not analysis.
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub delta_step: f64,
    pub chi_step: f64,
    pub chi_max: f64,
    pub samples_per_trial: usize,
    pub strict_annulus: bool,
    pub annulus_samples: usize,
    pub grid_points: usize,
    pub trials: usize,
    /// The search stopped at `max_trials` rather than by exhausting χ.
    pub exhausted: bool,
}

/// Output of the δ/χ search together with the bound constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaRobustnessCertificate {
    pub schema: String,
    pub model: ModelInfo,
    pub delta_star: f64,
    pub chi_star: f64,
    pub k: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub c: f64,
    pub lyapunov_p: Vec<Vec<f64>>,
    pub lyapunov_q: Vec<Vec<f64>>,
    pub fixed_point: Vec<f64>,
    pub period: f64,
    pub spectral_radius: f64,
    pub state_scale: Vec<f64>,
    /// `None` when `δ* = 0`.
    pub constants: Option<TheoremConstants>,
    /// `δ* < δ_max`.
    pub hypothesis_holds: bool,
    pub rho: RhoEstimate,
    pub search: SearchSummary,
    pub audit: Option<AuditSummary>,
    pub seed: u64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CertifyError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CertifyError::BadConstants("matrix rows must form a square matrix".into()));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl DeltaRobustnessCertificate {
    /// A positive δ was certified and the δ_max hypothesis holds.
    pub fn certified(&self) -> bool {
        self.delta_star > 0.0 && self.hypothesis_holds
    }

    pub fn fixed_point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.fixed_point)
    }

    /// Rebuilds the Lyapunov certificate at `χ*` (χ = 1 when `δ* = 0`).
    pub fn lyapunov(&self) -> Result<RobustLyapunovCertificate, CertifyError> {
        let cert = RobustLyapunovCertificate {
            p: from_rows(&self.lyapunov_p)?,
            q: from_rows(&self.lyapunov_q)?,
            k1: self.k1,
            k2: self.k2,
            k3: self.k3,
            c: self.c,
            chi: if self.chi_star > 0.0 { self.chi_star } else { 1.0 },
            origin: self.fixed_point(),
            scale: self.state_scale.clone(),
        };
        if cert.p.nrows() != self.fixed_point.len() || self.state_scale.len() != self.fixed_point.len() {
            return Err(CertifyError::BadConstants("certificate dimensions disagree".into()));
        }
        cert.validate()?;
        Ok(cert)
    }
}

/// Certificate plus the per-trial trace of the search.
#[derive(Debug, Clone)]
pub struct Certification {
    pub certificate: DeltaRobustnessCertificate,
    pub lyapunov: RobustLyapunovCertificate,
    pub trace: Vec<TrialRecord>,
}

/// Builds the quadratic Lyapunov candidate for a stable orbit.
pub fn lyapunov_for_orbit(
    sys: &dyn HybridSystem,
    orbit: &PeriodicOrbit,
    k: f64,
) -> Result<RobustLyapunovCertificate, CertifyError> {
    if !orbit.is_stable() {
        return Err(CertifyError::NotStable(orbit.spectral_radius));
    }
    let cert =
        RobustLyapunovCertificate::from_jacobian(&orbit.jacobian, &orbit.fixed_point, &sys.state_scale(), None, k)?;
    Ok(cert)
}

/// Sampled search for the largest δ (and its χ) at which the decrease
/// condition holds.
///
/// Starting from `δ = Δδ, χ = 1`, a passing trial records `(δ, χ)`, advances
/// `δ` and resets `χ = 1`; a failing trial advances `χ` by `Δχ`. The search
/// ends when `χ` would exceed `χ_max`. A trial at exactly `χ_max` is still
/// evaluated and may pass.
pub fn test_delta(
    sys: &dyn HybridSystem,
    orbit: &PeriodicOrbit,
    integ: &IntegratorConfig,
    cfg: &CertifyConfig,
    seed: u64,
) -> Result<Certification, CertifyError> {
    cfg.validate()?;
    integ.validate().map_err(PoincareError::from)?;
    let lyap = lyapunov_for_orbit(sys, orbit, cfg.k)?;
    let ctx = TrialContext { sys, cert: &lyap, integ, cfg, seed };

    let mut trace = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    let mut delta = cfg.delta_step;
    let mut chi = 1.0;
    let mut trial_index = 0usize;
    let mut exhausted = false;
    while chi <= cfg.chi_max {
        if trial_index >= cfg.max_trials {
            log::warn!("search stopped after {trial_index} trials at delta {delta}");
            exhausted = true;
            break;
        }
        let worst_margin = ctx.margin(delta, chi, trial_index as u64);
        let pass = worst_margin >= 0.0;
        log::debug!("trial {trial_index}: delta {delta:e} chi {chi} margin {worst_margin:e} pass {pass}");
        trace.push(TrialRecord { delta, chi, worst_margin, pass });
        trial_index += 1;
        if pass {
            best = Some((delta, chi));
            delta = cfg.delta_step * (trial_count_passed(&trace) + 1) as f64;
            chi = 1.0;
        } else {
            chi += cfg.chi_step;
        }
    }

    let (delta_star, chi_star) = best.unwrap_or((0.0, 0.0));
    let lyap = if chi_star > 0.0 { lyap.with_chi(chi_star) } else { lyap };
    let probe = poincare::estimate_domain_radius(sys, &orbit.fixed_point, integ, &cfg.domain_probe, seed);
    let rho = probe.radius;
    let (constants, hypothesis_holds, audit) = if delta_star > 0.0 {
        let tc = theorem_constants_unchecked(lyap.k1, lyap.k2, lyap.k3, lyap.c, chi_star, delta_star, rho.max(f64::MIN_POSITIVE))?;
        let ctx = TrialContext { sys, cert: &lyap, integ, cfg, seed };
        let audit = ctx.audit(delta_star, chi_star);
        (Some(tc), delta_star < tc.delta_max, Some(audit))
    } else {
        (None, false, None)
    };

    let certificate = DeltaRobustnessCertificate {
        schema: CERTIFICATE_SCHEMA.to_string(),
        model: ModelInfo::of(sys),
        delta_star,
        chi_star,
        k: cfg.k,
        k1: lyap.k1,
        k2: lyap.k2,
        k3: lyap.k3,
        c: lyap.c,
        lyapunov_p: rows(&lyap.p),
        lyapunov_q: rows(&lyap.q),
        fixed_point: orbit.fixed_point.iter().copied().collect(),
        period: orbit.period,
        spectral_radius: orbit.spectral_radius,
        state_scale: lyap.scale.clone(),
        constants,
        hypothesis_holds,
        rho: RhoEstimate { value: rho, capped: probe.capped, label: "estimated".to_string() },
        search: SearchSummary {
            delta_step: cfg.delta_step,
            chi_step: cfg.chi_step,
            chi_max: cfg.chi_max,
            samples_per_trial: cfg.samples,
            strict_annulus: cfg.strict_annulus,
            annulus_samples: if cfg.strict_annulus { cfg.annulus_samples } else { 0 },
            grid_points: cfg.grid_points,
            trials: trace.len(),
            exhausted,
        },
        audit,
        seed,
    };
    Ok(Certification { certificate, lyapunov: lyap, trace })
}

// δ advances as j·Δδ rather than by repeated addition, so grid values do not
// drift with the number of passes.
fn trial_count_passed(trace: &[TrialRecord]) -> usize {
    trace.iter().filter(|t| t.pass).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_constants() {
        let k = 1.0 / 0.36;
        let tc = theorem_constants(k, k, 1.0, 2.0, 3.0, 0.01, 1.0).unwrap();
        assert!((tc.m - 1.0).abs() <= 1e-12);
        assert!((tc.alpha - 0.8).abs() <= 1e-12);
        assert!((tc.gamma - 3.0).abs() <= 1e-12);
        assert!((tc.r_delta - k * 9e-4).abs() <= 1e-15);
        assert!((tc.delta_max - 1.0 / 3.0).abs() <= 1e-15);
        assert_eq!(tc.r1, tc.r2);
    }

    #[test]
    fn hypothesis_violation() {
        let err = theorem_constants(1.0, 1.0, 0.5, 2.0, 3.0, 0.5, 1.0).unwrap_err();
        assert!(matches!(err, CertifyError::HypothesisViolated { .. }));
        assert!(theorem_constants_unchecked(1.0, 1.0, 0.5, 2.0, 3.0, 0.5, 1.0).is_ok());
    }

    #[test]
    fn bad_constants() {
        assert!(matches!(
            theorem_constants(2.0, 1.0, 0.5, 2.0, 1.0, 0.1, 1.0),
            Err(CertifyError::BadConstants(_))
        ));
        assert!(matches!(
            theorem_constants(1.0, 2.0, 2.0, 2.0, 1.0, 0.1, 1.0),
            Err(CertifyError::BadConstants(_))
        ));
        assert!(matches!(
            theorem_constants(1.0, 2.0, 1.0, 2.0, 1.0, 0.0, 1.0),
            Err(CertifyError::BadConstants(_))
        ));
    }

    #[test]
    fn alpha_limit() {
        let tc = theorem_constants(1.0, 2.0, 2.0 - 1e-12, 2.0, 1.0, 0.01, 1.0).unwrap();
        assert!(tc.alpha < 1e-5);
    }

    #[test]
    fn grid_shape() {
        assert_eq!(d_grid(0.1, 1), vec![0.0]);
        assert_eq!(d_grid(0.1, 2), vec![-0.1, 0.1]);
        let g = d_grid(0.3, 11);
        assert_eq!(g.len(), 11);
        assert_eq!((g[0], g[10], g[5]), (-0.3, 0.3, 0.0));
        for i in 0..11 {
            assert_eq!(g[i], -g[10 - i]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CertifyConfig::default().validate().is_ok());
        assert!(CertifyConfig { delta_step: 0.0, ..Default::default() }.validate().is_err());
        assert!(CertifyConfig { k: 1.0, ..Default::default() }.validate().is_err());
        assert!(CertifyConfig { grid_points: 0, ..Default::default() }.validate().is_err());
        assert!(CertifyConfig { chi_max: 0.0, ..Default::default() }.validate().is_ok());
    }
}
