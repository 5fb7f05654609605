use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::certify::iss::InitDistribution;
use crate::certify::CertifyConfig;
use crate::hybrid::IntegratorConfig;
use crate::models::ModelKind;
use crate::poincare::FixedPointConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub name: ModelKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { name: ModelKind::BouncingBall, params: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutSection {
    pub rollouts: usize,
    pub steps: usize,
    pub delta_override: Option<f64>,
    pub init: InitDistribution,
    pub zero_disturbance: bool,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection { rollouts: 1000, steps: 50, delta_override: None, init: InitDistribution::Sublevel, zero_disturbance: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvarianceSection {
    pub boundary_samples: usize,
}

impl Default for InvarianceSection {
    fn default() -> Self {
        InvarianceSection { boundary_samples: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierMode {
    FixedDelta,
    MaxDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSection {
    pub mode: BarrierMode,
    pub gamma_b: f64,
    pub samples: usize,
    pub epsilon: f64,
    pub grid_points: usize,
    /// δ for fixed-δ mode; falls back to a certificate's δ*.
    pub delta: Option<f64>,
    pub delta_range: [f64; 2],
    pub outer_samples: usize,
}

impl Default for BarrierSection {
    fn default() -> Self {
        BarrierSection {
            mode: BarrierMode::FixedDelta,
            gamma_b: 0.5,
            samples: 200,
            epsilon: 0.05,
            grid_points: 11,
            delta: None,
            delta_range: [0.0, 0.05],
            outer_samples: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub steps: usize,
    /// `d_k ~ U(−δ, δ)`; 0 gives the nominal guard.
    pub delta: f64,
    /// Start state; defaults to the model's shooting guess.
    pub initial_state: Option<Vec<f64>>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { steps: 10, delta: 0.0, initial_state: None }
    }
}

/// Everything a run depends on. Written back as `resolved_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub integrator: IntegratorConfig,
    pub fixed_point: FixedPointConfig,
    pub certify: CertifyConfig,
    pub rollout: RolloutSection,
    pub invariance: InvarianceSection,
    pub barrier: BarrierSection,
    pub simulate: SimulateSection,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 picks the machine default.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSection::default(),
            integrator: IntegratorConfig::default(),
            fixed_point: FixedPointConfig::default(),
            certify: CertifyConfig::default(),
            rollout: RolloutSection::default(),
            invariance: InvarianceSection::default(),
            barrier: BarrierSection::default(),
            simulate: SimulateSection::default(),
            seed: 0,
            output_dir: PathBuf::from("deltacert-out"),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: String| CliError::Usage(e);
        self.integrator.validate().map_err(|e| usage(e.to_string()))?;
        self.certify.validate().map_err(|e| usage(e.to_string()))?;
        if let Some(d) = self.rollout.delta_override {
            if !(d > 0.0 && d.is_finite()) {
                return Err(usage(format!("rollout.delta_override must be positive, got {d}")));
            }
        }
        if !(self.simulate.delta >= 0.0 && self.simulate.delta.is_finite()) {
            return Err(usage(format!("simulate.delta must be non-negative, got {}", self.simulate.delta)));
        }
        if self.invariance.boundary_samples == 0 {
            return Err(usage("invariance.boundary_samples must be positive".into()));
        }
        Ok(())
    }
}
