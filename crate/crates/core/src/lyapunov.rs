//! Quadratic robust-Lyapunov functions `V(x) = x̃ᵀ P x̃` around a fixed point,
//! where `x̃ = S⁻¹(x − x*)` is the deviation in the model's state scaling.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hybrid::{HybridSystem, IntegratorConfig};
use crate::linalg::{self, LinalgError};
use crate::poincare;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LyapunovError {
    #[error("return map is not stable (spectral radius {0})")]
    NotStable(f64),
    #[error("Lyapunov series did not converge after {0} terms")]
    NoConvergence(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error("invalid certificate constants: {0}")]
    BadConstants(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for LyapunovError {
    fn from(err: LinalgError) -> Self {
        match err {
            LinalgError::NotSymmetric(a) => LyapunovError::NotSymmetric(a),
            other => LyapunovError::Linalg(other),
        }
    }
}

const MAX_SERIES_TERMS: usize = 1_000_000;

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Residual `AᵀPA − P + Q`.
pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * p * a - p + q
}

/// Solves `AᵀPA − P = −Q` for symmetric `P`.
///
/// Sums `Σ (Aᵀ)ʲ Q Aʲ` until a term drops below `1e-14` of the partial sum,
/// then applies one correction from the residual by an exact solve of the
/// vectorized equation, and symmetrizes.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LyapunovError> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(LyapunovError::Dimension(format!(
            "A is {:?}, Q is {:?}",
            a.shape(),
            q.shape()
        )));
    }
    let rho = linalg::spectral_radius(a)?;
    if rho >= 1.0 {
        return Err(LyapunovError::NotStable(rho));
    }
    let at = a.transpose();
    let mut term = q.clone();
    let mut p = q.clone();
    let mut terms = 1;
    loop {
        term = &at * &term * a;
        p += &term;
        terms += 1;
        if linalg::frobenius(&term) < 1e-14 * linalg::frobenius(&p) {
            break;
        }
        if terms >= MAX_SERIES_TERMS {
            return Err(LyapunovError::NoConvergence(terms));
        }
    }
    let r = lyapunov_residual(a, &p, q);
    let op = kron(&at, &at) - DMatrix::identity(n * n, n * n);
    let rhs = -DVector::from_column_slice(r.as_slice());
    if let Some(e) = op.lu().solve(&rhs) {
        p += DMatrix::from_column_slice(n, n, e.as_slice());
    }
    Ok((&p + p.transpose()) * 0.5)
}

/// `(λ_min(P), λ_max(P))` for a symmetric positive definite `P`.
pub fn symmetric_eig_bounds(p: &DMatrix<f64>) -> Result<(f64, f64), LyapunovError> {
    let eig = linalg::symmetric_eigen(p)?;
    let lo = eig.values[0];
    let hi = *eig.values.last().expect("non-empty");
    if !(lo > 0.0) {
        return Err(LyapunovError::NotPositiveDefinite(lo));
    }
    Ok((lo, hi))
}

/// Quadratic robust-Lyapunov candidate with its bounding constants.
///
/// `k₁‖x̃‖² ≤ V(x) ≤ k₂‖x̃‖²` and, where certified,
/// `‖x̃‖ ≥ χ|d| ⇒ V(P(x,d)) − V(x) ≤ −k₃‖x̃‖^c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustLyapunovCertificate {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub c: f64,
    pub chi: f64,
    pub origin: DVector<f64>,
    pub scale: Vec<f64>,
}

impl RobustLyapunovCertificate {
    /// Builds `P` from the return-map Jacobian `A` (model coordinates),
    /// working in the scaled deviation `x̃`. `k₃` is the decrease constant
    /// actually checked by the certifier; `χ` starts at 1.
    pub fn from_jacobian(
        a: &DMatrix<f64>,
        origin: &DVector<f64>,
        scale: &[f64],
        q: Option<DMatrix<f64>>,
        k3: f64,
    ) -> Result<Self, LyapunovError> {
        let n = a.nrows();
        if origin.len() != n || scale.len() != n {
            return Err(LyapunovError::Dimension("origin/scale length differs from A".into()));
        }
        let s = DMatrix::from_diagonal(&DVector::from_column_slice(scale));
        let s_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, scale.iter().map(|v| 1.0 / v)));
        let a_scaled = &s_inv * a * &s;
        let q = q.unwrap_or_else(|| DMatrix::identity(n, n));
        let p = solve_discrete_lyapunov(&a_scaled, &q)?;
        let (k1, k2) = symmetric_eig_bounds(&p)?;
        let cert = RobustLyapunovCertificate {
            p,
            q,
            k1,
            k2,
            k3,
            c: 2.0,
            chi: 1.0,
            origin: origin.clone(),
            scale: scale.to_vec(),
        };
        cert.validate()?;
        Ok(cert)
    }

    pub fn validate(&self) -> Result<(), LyapunovError> {
        if linalg::max_asymmetry(&self.p) > 1e-12 * self.p.amax() {
            return Err(LyapunovError::NotSymmetric(linalg::max_asymmetry(&self.p)));
        }
        if !(self.k1 > 0.0 && self.k1 <= self.k2) {
            return Err(LyapunovError::BadConstants(format!("need 0 < k1 <= k2, got {} / {}", self.k1, self.k2)));
        }
        if !(self.k3 > 0.0 && self.k3 < self.k2) {
            return Err(LyapunovError::BadConstants(format!("need 0 < k3 < k2, got {} / {}", self.k3, self.k2)));
        }
        if !(self.c > 0.0 && self.chi > 0.0) {
            return Err(LyapunovError::BadConstants("c and chi must be positive".into()));
        }
        Ok(())
    }

    pub fn with_chi(mut self, chi: f64) -> Self {
        self.chi = chi;
        self
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    /// `x̃ = S⁻¹(x − x*)`.
    pub fn deviation(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(self.origin.iter()).zip(&self.scale).map(|((xi, oi), si)| (xi - oi) / si),
        )
    }

    /// Inverse of [`Self::deviation`].
    pub fn from_deviation(&self, dev: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            dev.len(),
            dev.iter().zip(self.origin.iter()).zip(&self.scale).map(|((di, oi), si)| oi + di * si),
        )
    }

    pub fn scaled_distance(&self, x: &DVector<f64>) -> f64 {
        self.deviation(x).norm()
    }

    /// `k₄` of the additive restatement `ΔV ≤ −k₄‖x̃‖^c + σ|d|^c / 2`.
    pub fn k4(&self) -> f64 {
        2.0 * self.k3
    }

    pub fn sigma(&self) -> f64 {
        self.k4() * self.chi.powf(self.c)
    }

    /// Recovers `χ = (σ/k₄)^{1/c}` from the additive form.
    pub fn chi_from_additive(k4: f64, sigma: f64, c: f64) -> f64 {
        (sigma / k4).powf(1.0 / c)
    }
}

/// `V(x) = x̃ᵀ P x̃`.
pub fn lyap_value(cert: &RobustLyapunovCertificate, x: &DVector<f64>) -> f64 {
    let dev = cert.deviation(x);
    dev.dot(&(&cert.p * &dev))
}

/// `−[V(P_d(x)) − V(x)] − k‖x̃‖²`; non-negative exactly when the decrease
/// condition holds at `(x, d)`. A domain escape yields `−∞`.
pub fn decrease_margin(
    sys: &dyn HybridSystem,
    cert: &RobustLyapunovCertificate,
    x: &DVector<f64>,
    d: f64,
    k: f64,
    cfg: &IntegratorConfig,
) -> f64 {
    match poincare::poincare_extended(sys, x, d, cfg) {
        Ok(next) => {
            let v0 = lyap_value(cert, x);
            let v1 = lyap_value(cert, &next);
            let r2 = cert.deviation(x).norm_squared();
            -(v1 - v0) - k * r2
        }
        Err(_) => f64::NEG_INFINITY,
    }
}
