//! Hybrid systems with a single guard family and event-detecting integration
//! of the continuous flow.
//!
//! A system flows under `f(x)` until the guard `h(x)` crosses a level `d`
//! from above, at which point the reset map is applied. The integrator here
//! only handles the continuous segment; the return map built on top of it
//! lives in [`crate::poincare`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HybridError {
    #[error("integration diverged at t = {t}: |x| = {norm}")]
    IntegrationDiverged { t: f64, norm: f64 },
    #[error("step size underflow at t = {t} (h = {step:e})")]
    StepUnderflow { t: f64, step: f64 },
    #[error("no descending crossing of level {level} within {horizon} s")]
    NoImpact { level: f64, horizon: f64 },
    #[error("grazing guard crossing at t = {t}: guard rate {rate:e}")]
    GrazingEvent { t: f64, rate: f64 },
    #[error("reset undefined: {0}")]
    ResetDomain(String),
    #[error("invalid integrator config: {0}")]
    InvalidConfig(String),
    #[error("state has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A hybrid system `(f, h, Δ)` with guard family `S_d = {h(x) = d, ḣ(x) < 0}`.
///
/// Implementations must be deterministic and free of interior mutability so
/// they can be shared across worker threads.
pub trait HybridSystem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    /// Continuous closed-loop dynamics, written into `dx`.
    fn vector_field(&self, x: &[f64], dx: &mut [f64]);

    /// Signed guard height.
    fn guard(&self, x: &[f64]) -> f64;

    /// Analytic guard gradient. `None` falls back to central differences.
    fn guard_gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Reset map applied on the guard.
    fn reset(&self, x_minus: &[f64]) -> Result<Vec<f64>, HybridError>;

    /// Whether a crossing found at `x` counts as an impact. Models use this
    /// to exclude spurious crossings such as mid-swing foot scuffing.
    fn guard_armed(&self, _x: &[f64]) -> bool {
        true
    }

    /// Declared bounds `[d⁻, d⁺]` of guard levels the reset accepts.
    fn guard_interval(&self) -> (f64, f64);

    fn state_labels(&self) -> Vec<String>;

    fn state_units(&self) -> Vec<String>;

    /// Characteristic scale per coordinate; norms are taken after dividing
    /// by it.
    fn state_scale(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }

    fn parameters(&self) -> serde_json::Value;
}

/// Self-description of a model, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub name: String,
    pub state_labels: Vec<String>,
    pub state_units: Vec<String>,
    pub state_scale: Vec<f64>,
    pub guard_interval: [f64; 2],
    pub parameters: serde_json::Value,
}

impl ModelInfo {
    pub fn of(sys: &dyn HybridSystem) -> Self {
        let (lo, hi) = sys.guard_interval();
        ModelInfo {
            name: sys.name().to_string(),
            state_labels: sys.state_labels(),
            state_units: sys.state_units(),
            state_scale: sys.state_scale(),
            guard_interval: [lo, hi],
            parameters: sys.parameters(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Allowed guard residual `|h(x) - d|` at a located impact.
    pub event_tol: f64,
    /// Crossings before this time are ignored.
    pub dwell_time: f64,
    pub horizon: f64,
    pub grazing_threshold: f64,
    pub blowup_norm: f64,
    /// Dense-output probes per accepted step when scanning for crossings.
    pub event_subsamples: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            event_tol: 1e-10,
            dwell_time: 1e-6,
            horizon: 10.0,
            grazing_threshold: 1e-8,
            blowup_norm: 1e6,
            event_subsamples: 16,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<(), HybridError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("event_tol", self.event_tol),
            ("horizon", self.horizon),
            ("grazing_threshold", self.grazing_threshold),
            ("blowup_norm", self.blowup_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HybridError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.dwell_time >= 0.0 && self.dwell_time.is_finite()) {
            return Err(HybridError::InvalidConfig(format!(
                "dwell_time must be non-negative, got {}",
                self.dwell_time
            )));
        }
        if self.event_tol < self.abs_tol {
            return Err(HybridError::InvalidConfig(format!(
                "event_tol {} is below abs_tol {}",
                self.event_tol, self.abs_tol
            )));
        }
        if self.event_subsamples == 0 {
            return Err(HybridError::InvalidConfig("event_subsamples must be at least 1".into()));
        }
        Ok(())
    }

    /// The same config with both integration tolerances halved.
    pub fn halved_tolerances(&self) -> Self {
        IntegratorConfig {
            rel_tol: self.rel_tol / 2.0,
            abs_tol: self.abs_tol / 2.0,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuardCrossing {
    pub level: f64,
    pub time: f64,
    /// `ḣ` at the crossing, strictly negative.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub event: Option<GuardCrossing>,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory holds at least the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory holds at least the initial time")
    }
}

/// A located impact: the time of flight and the pre-impact state.
#[derive(Debug, Clone, PartialEq)]
pub struct Impact {
    pub time: f64,
    pub state: DVector<f64>,
    pub rate: f64,
}

fn check_dim(sys: &dyn HybridSystem, x: &[f64]) -> Result<(), HybridError> {
    if x.len() != sys.dim() {
        return Err(HybridError::DimensionMismatch { expected: sys.dim(), got: x.len() });
    }
    Ok(())
}

/// Continuous solution of `ẋ = f(x)` over `[0, t_end]`; no resets are applied.
pub fn flow(
    sys: &dyn HybridSystem,
    x0: &DVector<f64>,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, HybridError> {
    cfg.validate()?;
    check_dim(sys, x0.as_slice())?;
    if !(t_end > 0.0) {
        return Err(HybridError::InvalidConfig(format!("t_end must be positive, got {t_end}")));
    }
    let mut solver = Dopri5::new(sys, cfg);
    solver.run(x0.as_slice(), t_end, None, true)
}

/// Flows from a post-reset state to the first armed, descending crossing of
/// `h = d` after the dwell time.
pub fn impact(
    sys: &dyn HybridSystem,
    x_post: &DVector<f64>,
    d: f64,
    cfg: &IntegratorConfig,
) -> Result<Impact, HybridError> {
    cfg.validate()?;
    check_dim(sys, x_post.as_slice())?;
    let mut solver = Dopri5::new(sys, cfg);
    let traj = solver.run(x_post.as_slice(), cfg.horizon, Some(d), false)?;
    match traj.event {
        Some(ev) => Ok(Impact { time: ev.time, state: traj.final_state().clone(), rate: ev.rate }),
        None => Err(HybridError::NoImpact { level: d, horizon: cfg.horizon }),
    }
}

/// Same search as [`impact`], keeping every accepted step.
pub fn flow_to_impact(
    sys: &dyn HybridSystem,
    x_post: &DVector<f64>,
    d: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, HybridError> {
    cfg.validate()?;
    check_dim(sys, x_post.as_slice())?;
    let mut solver = Dopri5::new(sys, cfg);
    let traj = solver.run(x_post.as_slice(), cfg.horizon, Some(d), true)?;
    if traj.event.is_none() {
        return Err(HybridError::NoImpact { level: d, horizon: cfg.horizon });
    }
    Ok(traj)
}

/// Extended time-to-impact `T_e(x⁺, d)`.
pub fn time_to_impact(
    sys: &dyn HybridSystem,
    x_post: &DVector<f64>,
    d: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, HybridError> {
    impact(sys, x_post, d, cfg).map(|hit| hit.time)
}

pub fn apply_reset(sys: &dyn HybridSystem, x_minus: &DVector<f64>) -> Result<DVector<f64>, HybridError> {
    check_dim(sys, x_minus.as_slice())?;
    let out = sys.reset(x_minus.as_slice())?;
    check_dim(sys, &out)?;
    Ok(DVector::from_vec(out))
}

/// Central-difference guard gradient with step `1e-6·(1+‖x‖)`.
pub fn guard_gradient_fd(sys: &dyn HybridSystem, x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let step = 1e-6 * (1.0 + norm);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = sys.guard(&probe);
            probe[i] = x[i] - step;
            let down = sys.guard(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `ḣ(x) = ∇h(x)·f(x)`.
pub fn guard_rate(sys: &dyn HybridSystem, x: &[f64]) -> f64 {
    let grad = sys.guard_gradient(x).unwrap_or_else(|| guard_gradient_fd(sys, x));
    let mut dx = vec![0.0; x.len()];
    sys.vector_field(x, &mut dx);
    grad.iter().zip(&dx).map(|(g, v)| g * v).sum()
}

// Dormand-Prince 5(4) tableau. The fields are autonomous, so the nodes c_i
// never enter.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output weights (Hairer & Wanner).
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Dopri5<'a> {
    sys: &'a dyn HybridSystem,
    cfg: &'a IntegratorConfig,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    cont: [Vec<f64>; 5],
}

enum Scan {
    Continue,
    Hit { time: f64, state: Vec<f64>, rate: f64 },
}

impl<'a> Dopri5<'a> {
    fn new(sys: &'a dyn HybridSystem, cfg: &'a IntegratorConfig) -> Self {
        let n = sys.dim();
        Dopri5 {
            sys,
            cfg,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            cont: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    /// Stages 2..7 for a step of size `h` from `y` (k[0] must hold f(y)).
    /// Leaves the 5th-order solution in `y_new`.
    fn stages(&mut self, y: &[f64], h: f64, y_new: &mut [f64]) {
        let n = y.len();
        let rows: [&[f64]; 5] = [
            &[A21],
            &[A31, A32],
            &[A41, A42, A43],
            &[A51, A52, A53, A54],
            &[A61, A62, A63, A64, A65],
        ];
        for (s, coeffs) in rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in coeffs.iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            let (_, rest) = self.k.split_at_mut(s + 1);
            self.sys.vector_field(&self.tmp, &mut rest[0]);
        }
        for i in 0..n {
            y_new[i] = y[i]
                + h * (A71 * self.k[0][i]
                    + A73 * self.k[2][i]
                    + A74 * self.k[3][i]
                    + A75 * self.k[4][i]
                    + A76 * self.k[5][i]);
        }
        let (_, last) = self.k.split_at_mut(6);
        self.sys.vector_field(y_new, &mut last[0]);
    }

    fn error_norm(&self, y: &[f64], y_new: &[f64], h: f64) -> f64 {
        let n = y.len();
        let mut sum = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs().max(y_new[i].abs());
            sum += (e / sc).powi(2);
        }
        (sum / n as f64).sqrt()
    }

    fn prepare_dense(&mut self, y: &[f64], y_new: &[f64], h: f64) {
        for i in 0..y.len() {
            let ydiff = y_new[i] - y[i];
            let bspl = h * self.k[0][i] - ydiff;
            self.cont[0][i] = y[i];
            self.cont[1][i] = ydiff;
            self.cont[2][i] = bspl;
            self.cont[3][i] = ydiff - h * self.k[6][i] - bspl;
            self.cont[4][i] = h
                * (D1 * self.k[0][i]
                    + D3 * self.k[2][i]
                    + D4 * self.k[3][i]
                    + D5 * self.k[4][i]
                    + D6 * self.k[5][i]
                    + D7 * self.k[6][i]);
        }
    }

    fn dense(&self, theta: f64, out: &mut [f64]) {
        let th1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + th1 * (self.cont[2][i] + theta * (self.cont[3][i] + th1 * self.cont[4][i])));
        }
    }

    fn initial_step(&self, y: &[f64], f0: &[f64], t_end: f64) -> f64 {
        let n = y.len() as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..y.len() {
            let sc = self.cfg.abs_tol + self.cfg.rel_tol * y[i].abs();
            d0 += (y[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h.min(self.cfg.max_step).min(t_end)
    }

    fn run(
        &mut self,
        y0: &[f64],
        t_end: f64,
        level: Option<f64>,
        record: bool,
    ) -> Result<Trajectory, HybridError> {
        let n = y0.len();
        let mut t = 0.0;
        let mut y = y0.to_vec();
        let mut y_new = vec![0.0; n];
        let mut times = vec![0.0];
        let mut states = vec![DVector::from_column_slice(y0)];

        let mut f0 = vec![0.0; n];
        self.sys.vector_field(&y, &mut f0);
        self.k[0].copy_from_slice(&f0);

        // Last probe of g = h - d at or after the dwell time.
        let mut probe: Option<(f64, f64)> = None;
        if let Some(d) = level {
            if self.cfg.dwell_time == 0.0 {
                let g = self.sys.guard(&y) - d;
                if g.abs() <= self.cfg.event_tol && self.sys.guard_armed(&y) {
                    let rate = guard_rate(self.sys, &y);
                    if rate < 0.0 {
                        self.check_grazing(0.0, rate)?;
                        return Ok(Trajectory {
                            times,
                            states,
                            event: Some(GuardCrossing { level: d, time: 0.0, rate }),
                        });
                    }
                }
                probe = Some((0.0, g));
            }
        }

        let mut h = self.initial_step(&y, &f0, t_end);
        let mut reject_streak = 0u32;
        loop {
            let remaining = t_end - t;
            if remaining <= 0.0 {
                break;
            }
            let last = h >= remaining;
            if last {
                h = remaining;
            }
            let min_step = 16.0 * f64::EPSILON * t.abs().max(1.0);
            if h < min_step {
                return Err(HybridError::StepUnderflow { t, step: h });
            }
            let y_start = y.clone();
            self.stages(&y_start, h, &mut y_new);
            let err = self.error_norm(&y_start, &y_new, h);
            if !err.is_finite() {
                let norm = y_new.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !norm.is_finite() || norm > self.cfg.blowup_norm {
                    return Err(HybridError::IntegrationDiverged { t: t + h, norm });
                }
                h *= 0.2;
                reject_streak += 1;
                continue;
            }
            if err > 1.0 {
                let fac = (0.9 * err.powf(-0.2)).max(0.2);
                h *= fac;
                reject_streak += 1;
                if reject_streak > 200 {
                    return Err(HybridError::StepUnderflow { t, step: h });
                }
                continue;
            }
            reject_streak = 0;
            let t_new = if last { t_end } else { t + h };
            self.prepare_dense(&y_start, &y_new, h);

            if let Some(d) = level {
                if let Scan::Hit { time, state, rate } = self.scan_step(t, h, &y_start, d, &mut probe)? {
                    if record {
                        times.push(time);
                        states.push(DVector::from_vec(state));
                    } else {
                        times = vec![time];
                        states = vec![DVector::from_vec(state)];
                    }
                    return Ok(Trajectory {
                        times,
                        states,
                        event: Some(GuardCrossing { level: d, time, rate }),
                    });
                }
            }

            let norm = y_new.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > self.cfg.blowup_norm {
                return Err(HybridError::IntegrationDiverged { t: t_new, norm });
            }
            t = t_new;
            y.copy_from_slice(&y_new);
            let (first, rest) = self.k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            if record {
                times.push(t);
                states.push(DVector::from_column_slice(&y));
            }
            if last {
                break;
            }
            let fac = if err == 0.0 { 10.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 10.0) };
            h = (h * fac).min(self.cfg.max_step);
        }
        if !record {
            times = vec![t];
            states = vec![DVector::from_vec(y)];
        }
        Ok(Trajectory { times, states, event: None })
    }

    fn check_grazing(&self, t: f64, rate: f64) -> Result<(), HybridError> {
        if !(rate < 0.0) || rate.abs() < self.cfg.grazing_threshold {
            return Err(HybridError::GrazingEvent { t, rate });
        }
        Ok(())
    }

    /// Probes the dense output of the accepted step `[t0, t0+h]` for a
    /// descending crossing of `h = d` and refines the first armed one.
    fn scan_step(
        &mut self,
        t0: f64,
        h: f64,
        y0: &[f64],
        d: f64,
        probe: &mut Option<(f64, f64)>,
    ) -> Result<Scan, HybridError> {
        let n = y0.len();
        let m = self.cfg.event_subsamples;
        let dwell = self.cfg.dwell_time;
        let mut points: Vec<f64> = (1..=m).map(|j| j as f64 / m as f64).collect();
        if dwell > t0 && dwell < t0 + h {
            points.push((dwell - t0) / h);
            points.sort_by(|a, b| a.total_cmp(b));
        }
        let mut x = vec![0.0; n];
        for theta in points {
            let t = t0 + theta * h;
            if t < dwell {
                continue;
            }
            self.dense(theta, &mut x);
            let g = self.sys.guard(&x) - d;
            if let Some((tp, gp)) = *probe {
                if gp > 0.0 && g <= 0.0 {
                    let (time, state) = self.refine(t0, h, y0, d, tp, gp, t, g);
                    if self.sys.guard_armed(&state) {
                        let rate = guard_rate(self.sys, &state);
                        self.check_grazing(time, rate)?;
                        return Ok(Scan::Hit { time, state, rate });
                    }
                }
            }
            *probe = Some((t, g));
        }
        Ok(Scan::Continue)
    }

    /// Exact single step of size `tau` from `y0`; needs `k[0] = f(y0)`.
    fn step_to(&mut self, y0: &[f64], tau: f64) -> Vec<f64> {
        let saved: Vec<Vec<f64>> = self.k[1..].to_vec();
        let mut out = vec![0.0; y0.len()];
        if tau > 0.0 {
            self.stages(y0, tau, &mut out);
        } else {
            out.copy_from_slice(y0);
        }
        for (dst, src) in self.k[1..].iter_mut().zip(saved) {
            *dst = src;
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        t0: f64,
        h: f64,
        y0: &[f64],
        d: f64,
        ta: f64,
        ga: f64,
        tb: f64,
        gb: f64,
    ) -> (f64, Vec<f64>) {
        let tol = self.cfg.event_tol;
        // Prefer a fresh Runge-Kutta step from the start of the accepted step;
        // fall back to the interpolant when that does not bracket.
        let fa = self.sys.guard(&self.step_to(y0, ta - t0)) - d;
        let fb = self.sys.guard(&self.step_to(y0, tb - t0)) - d;
        if fa > 0.0 && fb <= 0.0 {
            let root = {
                let mut eval = |t: f64| self.sys.guard(&self.step_to(y0, t - t0)) - d;
                brent(&mut eval, ta, fa, tb, fb, tol)
            };
            return (root, self.step_to(y0, root - t0));
        }
        let mut x = vec![0.0; y0.len()];
        let root = {
            let mut eval = |t: f64| {
                self.dense((t - t0) / h, &mut x);
                self.sys.guard(&x) - d
            };
            brent(&mut eval, ta, ga, tb, gb, tol)
        };
        self.dense((root - t0) / h, &mut x);
        (root, x)
    }
}

/// Brent's method on a bracket with `fa > 0 >= fb`. Returns the endpoint
/// where `f <= 0` whenever the residual tolerance cannot be met, so the
/// reported state never sits on the wrong side of the level.
fn brent(f: &mut dyn FnMut(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64, tol: f64) -> f64 {
    if fb == 0.0 || fb.abs() <= tol {
        return b;
    }
    if fa.abs() <= tol {
        return a;
    }
    let (mut a, mut fa, mut b, mut fb) = (a, fa, b, fb);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol_t = 2.0 * f64::EPSILON * b.abs().max(1.0);
        let m = 0.5 * (c - b);
        if fb.abs() <= tol || m.abs() <= tol_t {
            break;
        }
        if e.abs() >= tol_t && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q0 * (q0 - r) - (b - a) * (r - 1.0)),
                    (q0 - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol_t * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol_t { d } else { tol_t.copysign(m) };
        fb = f(b);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ball in free flight: y'' = -g, guard y, elastic reset.
    struct Ballistic;

    impl HybridSystem for Ballistic {
        fn name(&self) -> &str {
            "ballistic"
        }
        fn dim(&self) -> usize {
            2
        }
        fn vector_field(&self, x: &[f64], dx: &mut [f64]) {
            dx[0] = x[1];
            dx[1] = -9.81;
        }
        fn guard(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
            Ok(vec![x[0], -x[1]])
        }
        fn guard_interval(&self) -> (f64, f64) {
            (-1.0, 1.0)
        }
        fn state_labels(&self) -> Vec<String> {
            vec!["y".into(), "v".into()]
        }
        fn state_units(&self) -> Vec<String> {
            vec!["m".into(), "m/s".into()]
        }
        fn parameters(&self) -> serde_json::Value {
            serde_json::Value::Null
        }
    }

    #[test]
    fn config_rejects_event_tol_below_abs_tol() {
        let cfg = IntegratorConfig { event_tol: 1e-13, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(HybridError::InvalidConfig(_))));
        let cfg = IntegratorConfig { max_step: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(IntegratorConfig::default().validate().is_ok());
    }

    #[test]
    fn ballistic_flow_matches_kinematics() {
        let cfg = IntegratorConfig::default();
        let traj = flow(&Ballistic, &DVector::from_vec(vec![0.0, 5.0]), 0.2, &cfg).unwrap();
        let x = traj.final_state();
        assert!((traj.final_time() - 0.2).abs() < 1e-15);
        assert!((x[0] - 0.8038).abs() < 1e-12);
        assert!((x[1] - 3.038).abs() < 1e-12);
        assert_eq!(traj.times[0], 0.0);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn impact_levels() {
        let cfg = IntegratorConfig::default();
        let x = DVector::from_vec(vec![0.0, 5.0]);
        let t0 = time_to_impact(&Ballistic, &x, 0.0, &cfg).unwrap();
        assert!((t0 - 2.0 * 5.0 / 9.81).abs() < 1e-11);
        let t1 = time_to_impact(&Ballistic, &x, -0.1, &cfg).unwrap();
        let expect = (5.0 + (25.0f64 + 2.0 * 9.81 * 0.1).sqrt()) / 9.81;
        assert!((t1 - expect).abs() < 1e-11);
        let hit = impact(&Ballistic, &x, -0.1, &cfg).unwrap();
        assert!((hit.state[0] + 0.1).abs() <= cfg.event_tol);
        assert!(hit.rate < 0.0);
    }

    #[test]
    fn crossing_at_start_with_zero_dwell() {
        let cfg = IntegratorConfig { dwell_time: 0.0, ..Default::default() };
        let x = DVector::from_vec(vec![0.0, -3.0]);
        assert_eq!(time_to_impact(&Ballistic, &x, 0.0, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn level_above_apex_is_no_impact() {
        let cfg = IntegratorConfig { horizon: 3.0, ..Default::default() };
        let x = DVector::from_vec(vec![0.0, 1.0]);
        // apex is 1/(2g) ≈ 0.051 m
        let err = time_to_impact(&Ballistic, &x, 0.2, &cfg).unwrap_err();
        assert!(matches!(err, HybridError::NoImpact { .. }));
    }

    #[test]
    fn tangential_touch_is_grazing() {
        // 1 cm below apex the downward crossing rate is about 0.44 m/s
        let cfg = IntegratorConfig { grazing_threshold: 1.0, ..Default::default() };
        let x = DVector::from_vec(vec![0.0, 1.0]);
        let apex = 1.0 / (2.0 * 9.81);
        let err = time_to_impact(&Ballistic, &x, apex - 0.01, &cfg).unwrap_err();
        assert!(matches!(err, HybridError::GrazingEvent { .. }));
    }

    #[test]
    fn blowup_is_reported() {
        struct Explode;
        impl HybridSystem for Explode {
            fn name(&self) -> &str {
                "explode"
            }
            fn dim(&self) -> usize {
                1
            }
            fn vector_field(&self, x: &[f64], dx: &mut [f64]) {
                dx[0] = x[0] * x[0];
            }
            fn guard(&self, x: &[f64]) -> f64 {
                -x[0]
            }
            fn reset(&self, x: &[f64]) -> Result<Vec<f64>, HybridError> {
                Ok(x.to_vec())
            }
            fn guard_interval(&self) -> (f64, f64) {
                (0.0, 0.0)
            }
            fn state_labels(&self) -> Vec<String> {
                vec!["x".into()]
            }
            fn state_units(&self) -> Vec<String> {
                vec!["1".into()]
            }
            fn parameters(&self) -> serde_json::Value {
                serde_json::Value::Null
            }
        }
        let cfg = IntegratorConfig::default();
        let err = flow(&Explode, &DVector::from_vec(vec![1.0]), 2.0, &cfg).unwrap_err();
        assert!(matches!(
            err,
            HybridError::IntegrationDiverged { .. } | HybridError::StepUnderflow { .. }
        ));
    }

    #[test]
    fn guard_rate_uses_fd_without_gradient() {
        assert!((guard_rate(&Ballistic, &[0.3, -2.5]) + 2.5).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch() {
        let cfg = IntegratorConfig::default();
        let err = flow(&Ballistic, &DVector::from_vec(vec![0.0]), 1.0, &cfg).unwrap_err();
        assert_eq!(err, HybridError::DimensionMismatch { expected: 2, got: 1 });
    }
}
