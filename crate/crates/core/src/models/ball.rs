use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::hybrid::{HybridError, HybridSystem};

/// Ball on a thrusting paddle: `h = y`, `Δ(y, v) = (y, −e·v + u0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BouncingBallParams {
    pub g: f64,
    /// Restitution. `e = 1` is accepted so that the no-orbit case can be
    /// constructed; the return map then has no fixed point when `u0 > 0`.
    pub e: f64,
    /// Velocity injected by the paddle at each bounce (m/s).
    pub u0: f64,
}

impl Default for BouncingBallParams {
    fn default() -> Self {
        BouncingBallParams { g: 9.81, e: 0.8, u0: 1.0 }
    }
}

impl BouncingBallParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("g must be positive, got {}", self.g)));
        }
        if !(self.e > 0.0 && self.e <= 1.0) {
            return Err(ModelError::InvalidParameter(format!("e must lie in (0, 1], got {}", self.e)));
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("u0 must be non-negative, got {}", self.u0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BouncingBall {
    params: BouncingBallParams,
}

impl BouncingBall {
    pub fn new(params: BouncingBallParams) -> Result<Self, ModelError> {
        params.validate()?;
        if params.u0 == 0.0 {
            log::warn!("bouncing ball with u0 = 0: the only fixed point is the Zeno state (0, 0)");
        }
        Ok(BouncingBall { params })
    }

    pub fn params(&self) -> &BouncingBallParams {
        &self.params
    }

    /// Pre-impact speed `s* = u0 / (1 − e)` as the state `(0, −s*)`;
    /// `None` when `e = 1`.
    pub fn fixed_point(&self) -> Option<DVector<f64>> {
        let p = &self.params;
        (p.e < 1.0).then(|| DVector::from_vec(vec![0.0, -p.u0 / (1.0 - p.e)]))
    }

    /// Flight time `2v⁺/g` of the orbit.
    pub fn period(&self) -> Option<f64> {
        let p = &self.params;
        (p.e < 1.0).then(|| 2.0 * p.u0 / (1.0 - p.e) / p.g)
    }

    /// Closed-form pre-impact velocity after one return: reset at height
    /// `y_prev` with velocity `v_minus`, then fall to the first descending
    /// crossing of `y = d`.
    pub fn analytic_map(&self, v_minus: f64, y_prev: f64, d: f64) -> Result<f64, HybridError> {
        let p = &self.params;
        let v_plus = -p.e * v_minus + p.u0;
        let radicand = v_plus * v_plus + 2.0 * p.g * (y_prev - d);
        let reaches = if v_plus > 0.0 { radicand > 0.0 } else { y_prev > d };
        if !reaches {
            return Err(HybridError::NoImpact { level: d, horizon: f64::INFINITY });
        }
        Ok(-radicand.sqrt())
    }

    fn labels() -> Vec<String> {
        vec!["y".into(), "v".into()]
    }

    fn units() -> Vec<String> {
        vec!["m".into(), "m/s".into()]
    }
}

impl HybridSystem for BouncingBall {
    fn name(&self) -> &str {
        "bouncing-ball"
    }

    fn dim(&self) -> usize {
        2
    }

    fn vector_field(&self, x: &[f64], dx: &mut [f64]) {
        dx[0] = x[1];
        dx[1] = -self.params.g;
    }

    fn guard(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn guard_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![1.0, 0.0])
    }

    fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
        Ok(vec![x[0], -self.params.e * x[1] + self.params.u0])
    }

    fn guard_interval(&self) -> (f64, f64) {
        (-0.5, 0.5)
    }

    fn state_labels(&self) -> Vec<String> {
        Self::labels()
    }

    fn state_units(&self) -> Vec<String> {
        Self::units()
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::to_value(self.params).expect("plain struct")
    }
}

/// The bouncing ball with a reset that only exists while the pre-impact
/// velocity stays within `band` of the orbit's.
#[derive(Debug, Clone, PartialEq)]
pub struct FragileBall {
    ball: BouncingBall,
    band: f64,
    v_star: f64,
}

impl FragileBall {
    pub const DEFAULT_BAND: f64 = 0.03;

    pub fn new(params: BouncingBallParams, band: f64) -> Result<Self, ModelError> {
        if !(band > 0.0) {
            return Err(ModelError::InvalidParameter(format!("band must be positive, got {band}")));
        }
        let ball = BouncingBall::new(params)?;
        let v_star = match ball.fixed_point() {
            Some(x) => x[1],
            None => return Err(ModelError::InvalidParameter("fragile ball needs e < 1".into())),
        };
        Ok(FragileBall { ball, band, v_star })
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn ball(&self) -> &BouncingBall {
        &self.ball
    }
}

impl HybridSystem for FragileBall {
    fn name(&self) -> &str {
        "fragile-ball"
    }

    fn dim(&self) -> usize {
        2
    }

    fn vector_field(&self, x: &[f64], dx: &mut [f64]) {
        self.ball.vector_field(x, dx)
    }

    fn guard(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn guard_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.ball.guard_gradient(x)
    }

    fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
        let off = (x[1] - self.v_star).abs();
        if off > self.band {
            return Err(HybridError::ResetDomain(format!(
                "pre-impact velocity {} is {off:.3e} from the orbit, band is {}",
                x[1], self.band
            )));
        }
        self.ball.reset(x)
    }

    fn guard_interval(&self) -> (f64, f64) {
        self.ball.guard_interval()
    }

    fn state_labels(&self) -> Vec<String> {
        BouncingBall::labels()
    }

    fn state_units(&self) -> Vec<String> {
        BouncingBall::units()
    }

    fn parameters(&self) -> serde_json::Value {
        let mut v = self.ball.parameters();
        v["band"] = serde_json::json!(self.band);
        v
    }
}
