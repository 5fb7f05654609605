use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use super::config::{BarrierMode, RunConfig};
use super::output::{self, Cell};
use super::{CliError, Command, EXIT_NOT_CERTIFIED, EXIT_OK, EXIT_VIOLATION};
use crate::certify::{
    self, BarrierConfig, CertifyError, DeltaRobustnessCertificate, InvarianceConfig, InvarianceReport, IssConfig,
};
use crate::hybrid::{self, HybridSystem, ModelInfo};
use crate::models::{self, BuiltModel};
use crate::poincare::{self, DisturbanceSequence, PeriodicOrbit};
use crate::sampling::{self, Purpose};

pub(super) fn dispatch(cmd: &Command, cfg: &RunConfig) -> Result<i32, CliError> {
    let built = models::build(cfg.model.name, &cfg.model.params).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    write_resolved(out, cfg, built.system.as_ref())?;
    match cmd {
        Command::FindOrbit { .. } => find_orbit(cfg, &built),
        Command::Certify { .. } => certify_cmd(cfg, &built),
        Command::VerifyIss { certificate, .. } => verify_iss(cfg, &built, certificate.as_deref()),
        Command::Barrier { certificate, .. } => barrier(cfg, &built, certificate.as_deref()),
        Command::Simulate { .. } => simulate(cfg, &built),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    output::write_json(path, value).map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<Cell>>) -> Result<(), CliError> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    output::write_csv_file(path, &header, rows).map_err(|e| CliError::io(path, e))
}

/// The echo lists every model parameter, not only the overridden ones, so a
/// rerun from it does not depend on built-in defaults.
fn write_resolved(out: &Path, cfg: &RunConfig, sys: &dyn HybridSystem) -> Result<(), CliError> {
    let mut resolved = cfg.clone();
    if let serde_json::Value::Object(map) = sys.parameters() {
        for (key, value) in map {
            if let Some(v) = value.as_f64() {
                resolved.model.params.insert(key, v);
            }
        }
    }
    write_json(&out.join("resolved_config.json"), &resolved)
}

fn certify_error(e: CertifyError) -> CliError {
    match e {
        CertifyError::DegenerateConfig(msg) => CliError::Usage(msg),
        other => CliError::Failed(other.to_string()),
    }
}

fn locate_orbit(cfg: &RunConfig, built: &BuiltModel) -> Result<PeriodicOrbit, CliError> {
    poincare::find_fixed_point(built.system.as_ref(), &built.initial_guess, &cfg.integrator, &cfg.fixed_point)
        .map_err(|e| CliError::NoOrbit(e.to_string()))
}

#[derive(Serialize)]
struct OrbitReport {
    model: ModelInfo,
    fixed_point: Vec<f64>,
    period: f64,
    jacobian: Vec<Vec<f64>>,
    eigenvalues_re: Vec<f64>,
    eigenvalues_im: Vec<f64>,
    eigenvalue_moduli: Vec<f64>,
    spectral_radius: f64,
    stable: bool,
    residual: f64,
    newton_iterations: usize,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    format!("({})", parts.join(", "))
}

fn find_orbit(cfg: &RunConfig, built: &BuiltModel) -> Result<i32, CliError> {
    let sys = built.system.as_ref();
    let orbit = locate_orbit(cfg, built)?;
    let report = OrbitReport {
        model: ModelInfo::of(sys),
        fixed_point: orbit.fixed_point.iter().copied().collect(),
        period: orbit.period,
        jacobian: orbit.jacobian.row_iter().map(|r| r.iter().copied().collect()).collect(),
        eigenvalues_re: orbit.eigenvalues.iter().map(|z| z.re).collect(),
        eigenvalues_im: orbit.eigenvalues.iter().map(|z| z.im).collect(),
        eigenvalue_moduli: orbit.eigenvalue_moduli(),
        spectral_radius: orbit.spectral_radius,
        stable: orbit.is_stable(),
        residual: orbit.residual,
        newton_iterations: orbit.newton_iterations,
    };
    write_json(&cfg.output_dir.join("orbit.json"), &report)?;
    println!("model            {}", sys.name());
    println!("fixed point      {}", fmt_vec(&report.fixed_point));
    println!("period           {:.10} s", orbit.period);
    println!("|eigenvalues|    {}", fmt_vec(&report.eigenvalue_moduli));
    println!("spectral radius  {:.10}", orbit.spectral_radius);
    Ok(EXIT_OK)
}

fn certify_cmd(cfg: &RunConfig, built: &BuiltModel) -> Result<i32, CliError> {
    let sys = built.system.as_ref();
    let out = cfg.output_dir.as_path();
    let orbit = locate_orbit(cfg, built)?;
    if !orbit.is_stable() {
        eprintln!("orbit is not exponentially stable (spectral radius {})", orbit.spectral_radius);
        return Ok(EXIT_NOT_CERTIFIED);
    }
    let result = certify::test_delta(sys, &orbit, &cfg.integrator, &cfg.certify, cfg.seed).map_err(certify_error)?;
    let cert = &result.certificate;
    write_json(&out.join("certificate.json"), cert)?;
    write_csv(
        &out.join("margin_trace.csv"),
        &["delta", "chi", "worst_margin", "pass"],
        result.trace.iter().map(|t| vec![t.delta.into(), t.chi.into(), t.worst_margin.into(), t.pass.into()]),
    )?;

    println!("model            {}", sys.name());
    println!("spectral radius  {:.10}", cert.spectral_radius);
    println!("delta*           {}", cert.delta_star);
    println!("chi*             {}", cert.chi_star);
    println!("trials           {}", cert.search.trials);
    if let Some(tc) = &cert.constants {
        println!("M                {:.6}", tc.m);
        println!("alpha            {:.6}", tc.alpha);
        println!("gamma            {:.6}", tc.gamma);
        println!("delta_max        {:.6} (rho {:.6}, estimated)", tc.delta_max, cert.rho.value);
    }
    if let Some(a) = &cert.audit {
        println!("audit            {} samples, worst margin {:e}, {}", a.samples, a.worst_margin, verdict(a.pass));
    }

    let invariance = if cert.delta_star > 0.0 {
        let inv_cfg = InvarianceConfig {
            boundary_samples: cfg.invariance.boundary_samples,
            grid_points: cfg.certify.grid_points,
            seed: cfg.seed,
        };
        let report = certify::check_invariance(sys, &result.lyapunov, cert.delta_star, &cfg.integrator, &inv_cfg)
            .map_err(certify_error)?;
        write_json(&out.join("invariance.json"), &report)?;
        println!("invariance       worst excess {:e}, {}", report.worst_excess, verdict(report.pass));
        Some(report)
    } else {
        None
    };

    let ok = cert.certified()
        && cert.audit.is_some_and(|a| a.pass)
        && invariance.as_ref().is_some_and(|r: &InvarianceReport| r.pass);
    if ok {
        Ok(EXIT_OK)
    } else {
        eprintln!("not certified: {}", not_certified_reason(cert, invariance.as_ref()));
        Ok(EXIT_NOT_CERTIFIED)
    }
}

fn not_certified_reason(cert: &DeltaRobustnessCertificate, inv: Option<&InvarianceReport>) -> &'static str {
    if cert.delta_star == 0.0 {
        "no positive delta passed the sampled decrease test"
    } else if !cert.hypothesis_holds {
        "delta* is not below delta_max"
    } else if !cert.audit.is_some_and(|a| a.pass) {
        "the audit at (delta*, chi*) found a negative margin"
    } else if !inv.is_some_and(|r| r.pass) {
        "the sublevel set is not forward invariant on the samples"
    } else {
        "unknown"
    }
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn load_certificate(path: &Path) -> Result<DeltaRobustnessCertificate, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read certificate {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid certificate {}: {e}", path.display())))
}

fn certificate_path(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("certificate.json"))
}

fn verify_iss(cfg: &RunConfig, built: &BuiltModel, cert_flag: Option<&Path>) -> Result<i32, CliError> {
    let sys = built.system.as_ref();
    let cert = load_certificate(&certificate_path(cfg, cert_flag))?;
    if cert.model.name != sys.name() {
        return Err(CliError::Usage(format!(
            "certificate is for model {} but the run is configured for {}",
            cert.model.name,
            sys.name()
        )));
    }
    if cfg.rollout.delta_override.is_none() && cert.delta_star <= 0.0 {
        eprintln!("certificate has delta* = 0; nothing to verify (pass --delta to force one)");
        return Ok(EXIT_NOT_CERTIFIED);
    }
    let iss_cfg = IssConfig {
        rollouts: cfg.rollout.rollouts,
        steps: cfg.rollout.steps,
        seed: cfg.seed,
        delta_override: cfg.rollout.delta_override,
        init: cfg.rollout.init,
        zero_disturbance: cfg.rollout.zero_disturbance,
    };
    let report = certify::verify_iss_bound(sys, &cert, &cfg.integrator, &iss_cfg).map_err(certify_error)?;
    let out = cfg.output_dir.as_path();
    write_json(&out.join("iss_report.json"), &report)?;
    write_csv(
        &out.join("iss_rollouts.csv"),
        &["rollout_id", "k", "dist_to_xstar", "bound_value", "violated"],
        report.records.iter().map(|r| {
            vec![r.rollout_id.into(), r.k.into(), r.dist_to_xstar.into(), r.bound_value.into(), r.violated.into()]
        }),
    )?;
    println!("delta            {}", report.delta);
    println!("rollouts x K     {} x {}", report.rollouts, report.steps);
    println!("M, alpha, gamma  {:.6}, {:.6}, {:.6}", report.constants.m, report.constants.alpha, report.constants.gamma);
    println!("violations       {} in {} rollouts", report.violations, report.violating_rollouts);
    println!("truncations      {}", report.truncations);
    println!("worst slack      {:e}", report.worst_slack);
    if report.passed() {
        Ok(EXIT_OK)
    } else {
        eprintln!("soundness alarm: the bound was violated or a rollout left the map's domain");
        Ok(EXIT_VIOLATION)
    }
}

fn barrier(cfg: &RunConfig, built: &BuiltModel, cert_flag: Option<&Path>) -> Result<i32, CliError> {
    let sys = built.system.as_ref();
    let b = &cfg.barrier;
    let bcfg = BarrierConfig {
        gamma_b: b.gamma_b,
        samples: b.samples,
        epsilon: b.epsilon,
        grid_points: b.grid_points,
        seed: cfg.seed,
    };
    bcfg.validate().map_err(certify_error)?;
    let orbit = locate_orbit(cfg, built)?;
    let out = cfg.output_dir.as_path();
    match b.mode {
        BarrierMode::FixedDelta => {
            let delta = match (b.delta, cert_flag) {
                (Some(d), _) => d,
                (None, flag) => {
                    let path = certificate_path(cfg, flag);
                    if flag.is_none() && !path.exists() {
                        return Err(CliError::Usage("fixed-delta mode needs --delta or a certificate".into()));
                    }
                    load_certificate(&path)?.delta_star
                }
            };
            let report =
                certify::barrier_verify_fixed_delta(sys, &orbit.fixed_point, delta, &cfg.integrator, &bcfg)
                    .map_err(certify_error)?;
            write_json(&out.join("barrier_report.json"), &report)?;
            println!("delta            {}", report.delta);
            println!("samples          {} passed of {}", report.passed_samples, report.samples);
            println!("worst margin     {:e}", report.worst_margin);
            println!("confidence       {:.6}", report.confidence);
            println!("verdict          {}", verdict(report.pass));
            Ok(if report.pass { EXIT_OK } else { EXIT_NOT_CERTIFIED })
        }
        BarrierMode::MaxDelta => {
            let range = (b.delta_range[0], b.delta_range[1]);
            let report =
                certify::barrier_max_delta(sys, &orbit.fixed_point, range, b.outer_samples, &cfg.integrator, &bcfg)
                    .map_err(certify_error)?;
            write_json(&out.join("barrier_max_report.json"), &report)?;
            println!("delta range      [{}, {}]", range.0, range.1);
            println!("accepted         {} of {}", report.accepted.len(), report.outer_samples);
            println!("delta*_N         {}", report.delta_star_n);
            println!("confidence       {:.6}", report.confidence);
            if report.empty {
                println!("verdict          EMPTY (delta*_N = 0)");
                Ok(EXIT_NOT_CERTIFIED)
            } else {
                Ok(EXIT_OK)
            }
        }
    }
}

fn simulate(cfg: &RunConfig, built: &BuiltModel) -> Result<i32, CliError> {
    let sys = built.system.as_ref();
    let n = sys.dim();
    let x0 = match &cfg.simulate.initial_state {
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => return Err(CliError::Usage(format!("initial_state has {} entries, model has {n}", v.len()))),
        None => match locate_orbit(cfg, built) {
            Ok(orbit) => orbit.fixed_point,
            Err(e) => {
                log::warn!("{e}; starting from the shooting guess");
                built.initial_guess.clone()
            }
        },
    };
    let steps = cfg.simulate.steps;
    let delta = cfg.simulate.delta;
    let ds = if delta > 0.0 {
        let mut rng = sampling::stream(cfg.seed, Purpose::Simulate, 0, 0);
        DisturbanceSequence::uniform(delta, steps, &mut rng)
    } else {
        DisturbanceSequence::zeros(steps)
    };

    let labels = sys.state_labels();
    let mut traj_rows: Vec<Vec<Cell>> = Vec::new();
    let mut step_states = vec![x0.clone()];
    let mut t0 = 0.0;
    let mut x = x0;
    let mut failure = None;
    for (k, &d) in ds.values().iter().enumerate() {
        let seg = hybrid::apply_reset(sys, &x).and_then(|xp| hybrid::flow_to_impact(sys, &xp, d, &cfg.integrator));
        match seg {
            Ok(seg) if seg.event.is_some() => {
                for (t, s) in seg.times.iter().zip(&seg.states) {
                    let mut row = vec![Cell::Int(k), Cell::Float(t0 + t)];
                    row.extend(s.iter().map(|v| Cell::Float(*v)));
                    row.push(Cell::Float(sys.guard(s.as_slice())));
                    traj_rows.push(row);
                }
                t0 += seg.final_time();
                x = seg.final_state().clone();
                step_states.push(x.clone());
            }
            Ok(_) => {
                failure = Some((k, "no impact within the horizon".to_string()));
                break;
            }
            Err(e) => {
                failure = Some((k, e.to_string()));
                break;
            }
        }
    }

    let out = cfg.output_dir.as_path();
    let mut header = vec!["step".to_string(), "t".to_string()];
    header.extend(labels.iter().cloned());
    header.push("h".to_string());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("trajectory.csv"), &header_ref, traj_rows)?;

    let mut header = vec!["k".to_string(), "d_k".to_string()];
    header.extend(labels.iter().cloned());
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    let last = step_states.len() - 1;
    let rows = step_states.iter().enumerate().map(|(k, s)| {
        let d = if k < last { Cell::Float(ds.values()[k]) } else { Cell::Empty };
        let mut row = vec![Cell::Int(k), d];
        row.extend(s.iter().map(|v| Cell::Float(*v)));
        row
    });
    write_csv(&out.join("steps.csv"), &header_ref, rows)?;

    println!("steps            {} of {}", last, steps);
    println!("final state      {}", fmt_vec(step_states[last].as_slice()));
    if let Some((k, msg)) = failure {
        eprintln!("simulation stopped at step {k}: {msg}");
    }
    Ok(EXIT_OK)
}
