//! Small systems with trivially known return maps, for checking the
//! machinery itself.

use nalgebra::{DMatrix, DVector};

use super::ModelError;
use crate::hybrid::{HybridError, HybridSystem};

/// State `(s, z)`: a clock `ṡ = −1` with guard `h = s`, and a frozen block
/// `z` that the reset maps linearly, `Δ(s, z) = (1, M z)`. The return map is
/// `P_d(s, z) = (d, M z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearReturnModel {
    m: DMatrix<f64>,
}

impl LinearReturnModel {
    pub fn new(m: DMatrix<f64>) -> Result<Self, ModelError> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(ModelError::Dimension(format!("M must be square and non-empty, got {:?}", m.shape())));
        }
        Ok(LinearReturnModel { m })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// `DP₀` in the full state ordering: the clock row and column vanish.
    pub fn return_jacobian(&self) -> DMatrix<f64> {
        let n = self.m.nrows();
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((1, 1), (n, n)).copy_from(&self.m);
        a
    }
}

impl HybridSystem for LinearReturnModel {
    fn name(&self) -> &str {
        "linear-return"
    }

    fn dim(&self) -> usize {
        self.m.nrows() + 1
    }

    fn vector_field(&self, _x: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
        dx[0] = -1.0;
    }

    fn guard(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn guard_gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; x.len()];
        g[0] = 1.0;
        Some(g)
    }

    fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
        let z = DVector::from_column_slice(&x[1..]);
        let mut out = vec![1.0];
        out.extend((&self.m * z).iter());
        Ok(out)
    }

    fn guard_interval(&self) -> (f64, f64) {
        (-0.5, 0.5)
    }

    fn state_labels(&self) -> Vec<String> {
        std::iter::once("s".to_string()).chain((0..self.m.nrows()).map(|i| format!("z{i}"))).collect()
    }

    fn state_units(&self) -> Vec<String> {
        vec!["1".to_string(); self.dim()]
    }

    fn parameters(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = self.m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::json!({ "M": rows })
    }
}

/// `ẋ = 0`, `h = x₀`, identity reset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroField {
    pub dim: usize,
}

impl HybridSystem for ZeroField {
    fn name(&self) -> &str {
        "zero-field"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vector_field(&self, _x: &[f64], dx: &mut [f64]) {
        dx.fill(0.0);
    }

    fn guard(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
        Ok(x.to_vec())
    }

    fn guard_interval(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn state_labels(&self) -> Vec<String> {
        (0..self.dim).map(|i| format!("x{i}")).collect()
    }

    fn state_units(&self) -> Vec<String> {
        vec!["1".to_string(); self.dim]
    }

    fn parameters(&self) -> serde_json::Value {
        serde_json::json!({ "dim": self.dim })
    }
}
