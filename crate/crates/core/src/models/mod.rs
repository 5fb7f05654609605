//! Shipped hybrid systems: an actuated bouncing ball with a closed-form
//! return map, a fragile variant whose reset is only defined near the
//! orbit, and a passive compass-gait walker.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hybrid::HybridSystem;

mod ball;
mod compass_gait;
pub mod testing;

pub use ball::{BouncingBall, BouncingBallParams, FragileBall};
pub use compass_gait::{rigid_impact, CompassGait, CompassGaitConfig, CompassGaitParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown model '{0}' (expected bouncing-ball, fragile-ball or compass-gait)")]
    UnknownModel(String),
    #[error("unknown parameter '{key}' for model {model}")]
    UnknownParameter { model: String, key: String },
    #[error("contact Jacobian is rank deficient at the impact state")]
    SingularContact,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model config: {0}")]
    Config(String),
}

/// Model selector used by the CLI and config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BouncingBall,
    FragileBall,
    CompassGait,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::BouncingBall => "bouncing-ball",
            ModelKind::FragileBall => "fragile-ball",
            ModelKind::CompassGait => "compass-gait",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bouncing-ball" => Ok(ModelKind::BouncingBall),
            "fragile-ball" => Ok(ModelKind::FragileBall),
            "compass-gait" => Ok(ModelKind::CompassGait),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }
}

/// A constructed model together with the shooting guess for its orbit.
pub struct BuiltModel {
    pub system: Box<dyn HybridSystem>,
    pub initial_guess: DVector<f64>,
}

fn take(
    params: &mut BTreeMap<String, f64>,
    key: &str,
    default: f64,
) -> f64 {
    params.remove(key).unwrap_or(default)
}

fn reject_leftovers(kind: ModelKind, params: BTreeMap<String, f64>) -> Result<(), ModelError> {
    match params.into_keys().next() {
        Some(key) => Err(ModelError::UnknownParameter { model: kind.to_string(), key }),
        None => Ok(()),
    }
}

/// Builds a model from its selector and scalar parameter overrides.
pub fn build(kind: ModelKind, overrides: &BTreeMap<String, f64>) -> Result<BuiltModel, ModelError> {
    let mut params = overrides.clone();
    match kind {
        ModelKind::BouncingBall | ModelKind::FragileBall => {
            let d = BouncingBallParams::default();
            let p = BouncingBallParams {
                g: take(&mut params, "g", d.g),
                e: take(&mut params, "e", d.e),
                u0: take(&mut params, "u0", d.u0),
            };
            let band = take(&mut params, "band", FragileBall::DEFAULT_BAND);
            if kind == ModelKind::BouncingBall && overrides.contains_key("band") {
                return Err(ModelError::UnknownParameter { model: kind.to_string(), key: "band".into() });
            }
            reject_leftovers(kind, params)?;
            let (system, guess): (Box<dyn HybridSystem>, _) = if kind == ModelKind::BouncingBall {
                (Box::new(BouncingBall::new(p)?), DVector::from_vec(vec![0.0, -4.0]))
            } else {
                // the reset only exists within the band, so start inside it
                let fragile = FragileBall::new(p, band)?;
                let v_star = fragile.ball().fixed_point().expect("e < 1 checked")[1];
                (Box::new(fragile), DVector::from_vec(vec![0.0, v_star + 0.5 * band.min(1.0)]))
            };
            Ok(BuiltModel { system, initial_guess: guess })
        }
        ModelKind::CompassGait => {
            let cfg = CompassGaitConfig::shipped();
            let d = cfg.params;
            let p = CompassGaitParams {
                m: take(&mut params, "m", d.m),
                m_h: take(&mut params, "m_h", d.m_h),
                a: take(&mut params, "a", d.a),
                b: take(&mut params, "b", d.b),
                l: take(&mut params, "l", d.l),
                g: take(&mut params, "g", d.g),
                slope: take(&mut params, "slope", d.slope),
            };
            reject_leftovers(kind, params)?;
            let guess = DVector::from_column_slice(&cfg.initial_guess);
            let system = Box::new(CompassGait::with_scale(p, cfg.state_scale.clone())?);
            Ok(BuiltModel { system, initial_guess: guess })
        }
    }
}
