//! Passive compass-gait walker on a slope.
//!
//! State `(θ₁, θ₂, θ̇₁, θ̇₂)`: `θ₁` is the stance leg angle from vertical
//! (positive with the hip ahead, downhill), `θ₂` the swing leg angle from
//! vertical (positive with the swing foot ahead of the hip). The guard is the
//! swing-foot height above the slope, measured along the slope normal.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::hybrid::{HybridError, HybridSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassGaitParams {
    /// Leg mass (kg).
    pub m: f64,
    /// Hip mass (kg).
    pub m_h: f64,
    /// Foot to leg center of mass (m).
    pub a: f64,
    /// Leg center of mass to hip (m).
    pub b: f64,
    pub l: f64,
    pub g: f64,
    /// Slope angle (rad).
    pub slope: f64,
}

impl CompassGaitParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [("m", self.m), ("m_h", self.m_h), ("a", self.a), ("b", self.b), ("l", self.l), ("g", self.g)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if (self.a + self.b - self.l).abs() > 1e-12 {
            return Err(ModelError::InvalidParameter(format!(
                "a + b must equal l, got {} + {} vs {}",
                self.a, self.b, self.l
            )));
        }
        if !self.slope.is_finite() {
            return Err(ModelError::InvalidParameter("slope must be finite".into()));
        }
        Ok(())
    }
}

/// Versioned parameter file shipped with the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompassGaitConfig {
    pub version: u32,
    pub params: CompassGaitParams,
    pub state_scale: Vec<f64>,
    pub initial_guess: Vec<f64>,
}

const SHIPPED_CONFIG: &str = include_str!("../../../../configs/compass_gait.json");

impl CompassGaitConfig {
    pub const VERSION: u32 = 1;

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: CompassGaitConfig = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        if cfg.version != Self::VERSION {
            return Err(ModelError::Config(format!("unsupported version {}", cfg.version)));
        }
        if cfg.state_scale.len() != 4 || cfg.initial_guess.len() != 4 {
            return Err(ModelError::Config("state_scale and initial_guess need 4 entries".into()));
        }
        cfg.params.validate()?;
        Ok(cfg)
    }

    /// The passive-walker set in `configs/compass_gait.json`.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_CONFIG).expect("shipped compass-gait config is valid")
    }
}

impl Default for CompassGaitParams {
    fn default() -> Self {
        CompassGaitConfig::shipped().params
    }
}

/// `q̇⁺ = (R − R D⁻¹J_hᵀ(J_h D⁻¹ J_hᵀ)⁻¹ J_h) q̇⁻`.
///
/// `jh` may have zero rows, in which case the result is `R q̇⁻`.
pub fn rigid_impact(
    d: &DMatrix<f64>,
    jh: &DMatrix<f64>,
    qdot_minus: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<DVector<f64>, ModelError> {
    let n = d.nrows();
    if d.ncols() != n || jh.ncols() != n || qdot_minus.len() != n || r.ncols() != n {
        return Err(ModelError::Dimension(format!(
            "D {:?}, J_h {:?}, q̇ {}, R {:?}",
            d.shape(),
            jh.shape(),
            qdot_minus.len(),
            r.shape()
        )));
    }
    if jh.nrows() == 0 {
        return Ok(r * qdot_minus);
    }
    let d_lu = d.clone().lu();
    let d_inv_jt = d_lu.solve(&jh.transpose()).ok_or(ModelError::SingularContact)?;
    let schur = jh * &d_inv_jt;
    let lambda = schur.lu().solve(&(jh * qdot_minus)).ok_or(ModelError::SingularContact)?;
    if !lambda.iter().all(|v| v.is_finite()) {
        return Err(ModelError::SingularContact);
    }
    Ok(r * (qdot_minus - d_inv_jt * lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompassGait {
    params: CompassGaitParams,
    scale: Vec<f64>,
}

impl CompassGait {
    pub fn new(params: CompassGaitParams) -> Result<Self, ModelError> {
        Self::with_scale(params, vec![1.0; 4])
    }

    pub fn with_scale(params: CompassGaitParams, scale: Vec<f64>) -> Result<Self, ModelError> {
        params.validate()?;
        if scale.len() != 4 || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(ModelError::InvalidParameter("state scale needs 4 positive entries".into()));
        }
        Ok(CompassGait { params, scale })
    }

    pub fn params(&self) -> &CompassGaitParams {
        &self.params
    }

    fn mass_matrix(&self, t1: f64, t2: f64) -> Matrix2<f64> {
        let CompassGaitParams { m, m_h, a, b, l, .. } = self.params;
        let off = b * m * l * (t1 + t2).cos();
        Matrix2::new(a * a * m + l * l * (m + m_h), off, off, b * b * m)
    }

    /// Kinetic plus potential energy, with the stance foot at zero height.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let CompassGaitParams { m, m_h, a, b, l, g, .. } = self.params;
        let (t1, t2) = (x[0], x[1]);
        let qd = Vector2::new(x[2], x[3]);
        let kinetic = 0.5 * qd.dot(&(self.mass_matrix(t1, t2) * qd));
        let potential = g * ((a * m + l * (m + m_h)) * t1.cos() - b * m * t2.cos());
        kinetic + potential
    }

    /// Total mass, for shifting the potential reference between stance feet.
    pub fn total_mass(&self) -> f64 {
        2.0 * self.params.m + self.params.m_h
    }

    /// Height of the swing foot above the stance foot (vertical, not
    /// slope-normal).
    pub fn swing_foot_height(&self, x: &[f64]) -> f64 {
        self.params.l * (x[0].cos() - x[1].cos())
    }

    /// Floating-base inertia over `(p_x, p_y, θ₁, θ₂)`, with `p` the stance
    /// foot position.
    pub fn extended_mass_matrix(&self, t1: f64, t2: f64) -> DMatrix<f64> {
        let CompassGaitParams { m, m_h, a, b, l, .. } = self.params;
        let mt = 2.0 * m + m_h;
        let c1 = a * m + l * (m + m_h);
        let d2 = self.mass_matrix(t1, t2);
        #[rustfmt::skip]
        let d = DMatrix::from_row_slice(4, 4, &[
            mt, 0.0, c1 * t1.cos(), b * m * t2.cos(),
            0.0, mt, -c1 * t1.sin(), b * m * t2.sin(),
            c1 * t1.cos(), -c1 * t1.sin(), d2[(0, 0)], d2[(0, 1)],
            b * m * t2.cos(), b * m * t2.sin(), d2[(1, 0)], d2[(1, 1)],
        ]);
        d
    }

    /// Jacobian of the swing-foot position over `(p_x, p_y, θ₁, θ₂)`.
    pub fn swing_foot_jacobian(&self, t1: f64, t2: f64) -> DMatrix<f64> {
        let l = self.params.l;
        DMatrix::from_row_slice(2, 4, &[1.0, 0.0, l * t1.cos(), l * t2.cos(), 0.0, 1.0, -l * t1.sin(), l * t2.sin()])
    }

    /// Leg swap: new stance is the old swing leg.
    pub fn relabel_matrix() -> DMatrix<f64> {
        let mut r = DMatrix::zeros(4, 4);
        r[(2, 3)] = -1.0;
        r[(3, 2)] = -1.0;
        r
    }

    /// Extended-coordinate post-impact velocity before relabeling.
    pub fn impact_velocity(&self, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        let (t1, t2) = (x[0], x[1]);
        let d = self.extended_mass_matrix(t1, t2);
        let jh = self.swing_foot_jacobian(t1, t2);
        let qd = DVector::from_vec(vec![0.0, 0.0, x[2], x[3]]);
        rigid_impact(&d, &jh, &qd, &DMatrix::identity(4, 4))
    }

    /// `ḣ` along the flow: the slope-normal swing-foot velocity.
    pub fn analytic_guard_rate(&self, x: &[f64]) -> f64 {
        let CompassGaitParams { l, slope, .. } = self.params;
        -l * (x[0] - slope).sin() * x[2] + l * (x[1] + slope).sin() * x[3]
    }
}

impl HybridSystem for CompassGait {
    fn name(&self) -> &str {
        "compass-gait"
    }

    fn dim(&self) -> usize {
        4
    }

    fn vector_field(&self, x: &[f64], dx: &mut [f64]) {
        let CompassGaitParams { m, m_h, a, b, l, g, .. } = self.params;
        let (t1, t2, w1, w2) = (x[0], x[1], x[2], x[3]);
        let d = self.mass_matrix(t1, t2);
        let s = b * m * l * (t1 + t2).sin();
        let coriolis = Vector2::new(-s * w2 * w2, -s * w1 * w1);
        let gravity = Vector2::new(-g * (a * m + l * (m + m_h)) * t1.sin(), b * g * m * t2.sin());
        let rhs = -(coriolis + gravity);
        let det = d[(0, 0)] * d[(1, 1)] - d[(0, 1)] * d[(1, 0)];
        dx[0] = w1;
        dx[1] = w2;
        dx[2] = (d[(1, 1)] * rhs[0] - d[(0, 1)] * rhs[1]) / det;
        dx[3] = (d[(0, 0)] * rhs[1] - d[(1, 0)] * rhs[0]) / det;
    }

    fn guard(&self, x: &[f64]) -> f64 {
        let CompassGaitParams { l, slope, .. } = self.params;
        l * ((x[0] - slope).cos() - (x[1] + slope).cos())
    }

    fn guard_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let CompassGaitParams { l, slope, .. } = self.params;
        Some(vec![-l * (x[0] - slope).sin(), l * (x[1] + slope).sin(), 0.0, 0.0])
    }

    /// Armed once the swing foot is ahead of the stance foot along the
    /// slope; excludes the mid-swing scuff.
    fn guard_armed(&self, x: &[f64]) -> bool {
        let slope = self.params.slope;
        (x[0] - slope).sin() + (x[1] + slope).sin() > 0.0
    }

    fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
        let qd = self.impact_velocity(x).map_err(|e| HybridError::ResetDomain(e.to_string()))?;
        Ok(vec![-x[1], -x[0], -qd[3], -qd[2]])
    }

    fn guard_interval(&self) -> (f64, f64) {
        (-0.05, 0.05)
    }

    fn state_labels(&self) -> Vec<String> {
        ["theta1", "theta2", "theta1_dot", "theta2_dot"].map(String::from).to_vec()
    }

    fn state_units(&self) -> Vec<String> {
        ["rad", "rad", "rad/s", "rad/s"].map(String::from).to_vec()
    }

    fn state_scale(&self) -> Vec<f64> {
        self.scale.clone()
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(self.params).expect("plain struct")
    }
}
