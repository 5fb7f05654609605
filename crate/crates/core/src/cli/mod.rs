//! Command-line front end: `find-orbit`, `certify`, `verify-iss`, `barrier`
//! and `simulate`.
//!
//! Exit codes: 0 ok, 2 no orbit, 3 not certified or failed verdict,
//! 4 soundness violation, 64 usage.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

mod commands;
pub mod config;
pub mod output;

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NO_ORBIT: i32 = 2;
pub const EXIT_NOT_CERTIFIED: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no periodic orbit: {0}")]
    NoOrbit(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoOrbit(_) => EXIT_NO_ORBIT,
            CliError::Failed(_) | CliError::Io { .. } => EXIT_FAILURE,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (key, value) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    let value: f64 = value.trim().parse().map_err(|e| format!("bad value for {key}: {e}"))?;
    Ok((key.trim().to_string(), value))
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration (unknown keys are rejected).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// bouncing-ball, fragile-ball or compass-gait.
    #[arg(long, value_name = "NAME")]
    pub model: Option<String>,
    /// Model parameter override, repeatable.
    #[arg(long = "param", value_name = "KEY=VAL", value_parser = parse_param)]
    pub params: Vec<(String, f64)>,
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = auto).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Also sample the annulus between r1 and r2 during the search.
    #[arg(long)]
    pub strict_annulus: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Locate the periodic orbit and its return-map linearization.
    FindOrbit {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the δ/χ search and write a certificate plus the margin trace.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Check the E-ISS bound of a certificate on disturbed rollouts.
    VerifyIss {
        #[command(flatten)]
        common: CommonArgs,
        /// Certificate to check (default: OUT/certificate.json).
        #[arg(long, value_name = "PATH")]
        certificate: Option<PathBuf>,
        /// Disturbance bound instead of the certified δ*.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Steps K per rollout.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Sampled barrier-function verification.
    Barrier {
        #[command(flatten)]
        common: CommonArgs,
        /// fixed-delta or max-delta.
        #[arg(long)]
        mode: Option<String>,
        /// δ for fixed-delta mode.
        #[arg(long)]
        delta: Option<f64>,
        /// Take δ from this certificate's δ* in fixed-delta mode.
        #[arg(long, value_name = "PATH")]
        certificate: Option<PathBuf>,
        /// Upper end of the δ range in max-delta mode.
        #[arg(long)]
        delta_hi: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Simulate the disturbed hybrid system and write trajectory CSVs.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        steps: Option<usize>,
        /// `d_k ~ U(−δ, δ)`.
        #[arg(long)]
        delta: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::FindOrbit { common }
            | Command::Certify { common }
            | Command::VerifyIss { common, .. }
            | Command::Barrier { common, .. }
            | Command::Simulate { common, .. } => common,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deltacert", version, about = "δ-robustness certification of periodic orbits in hybrid systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(cmd: &Command) -> Result<RunConfig, CliError> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(name) = &common.model {
        let kind = name.parse().map_err(|e: crate::models::ModelError| CliError::Usage(e.to_string()))?;
        if kind != cfg.model.name {
            cfg.model.params.clear();
        }
        cfg.model.name = kind;
    }
    let overrides: BTreeMap<String, f64> = common.params.iter().cloned().collect();
    cfg.model.params.extend(overrides);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    if common.strict_annulus {
        cfg.certify.strict_annulus = true;
    }
    match cmd {
        Command::VerifyIss { delta, rollouts, steps, .. } => {
            if delta.is_some() {
                cfg.rollout.delta_override = *delta;
            }
            if let Some(r) = rollouts {
                cfg.rollout.rollouts = *r;
            }
            if let Some(s) = steps {
                cfg.rollout.steps = *s;
            }
        }
        Command::Barrier { mode, delta, delta_hi, samples, epsilon, .. } => {
            if let Some(mode) = mode {
                cfg.barrier.mode = match mode.as_str() {
                    "fixed-delta" => config::BarrierMode::FixedDelta,
                    "max-delta" => config::BarrierMode::MaxDelta,
                    other => return Err(CliError::Usage(format!("unknown barrier mode '{other}'"))),
                };
            }
            if delta.is_some() {
                cfg.barrier.delta = *delta;
            }
            if let Some(hi) = delta_hi {
                cfg.barrier.delta_range[1] = *hi;
            }
            if let Some(n) = samples {
                cfg.barrier.samples = *n;
            }
            if let Some(e) = epsilon {
                cfg.barrier.epsilon = *e;
            }
        }
        Command::Simulate { steps, delta, .. } => {
            if let Some(s) = steps {
                cfg.simulate.steps = *s;
            }
            if let Some(d) = delta {
                cfg.simulate.delta = *d;
            }
        }
        Command::FindOrbit { .. } | Command::Certify { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<i32, CliError> {
    let cfg = resolve_config(cmd)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cmd, &cfg))
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if matches!(err, CliError::Usage(_)) {
                eprintln!("run `deltacert {} --help` for usage", subcommand_name(&cli.command));
            }
            err.exit_code()
        }
    }
}

fn subcommand_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::FindOrbit { .. } => "find-orbit",
        Command::Certify { .. } => "certify",
        Command::VerifyIss { .. } => "verify-iss",
        Command::Barrier { .. } => "barrier",
        Command::Simulate { .. } => "simulate",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_parsing() {
        assert_eq!(parse_param("e=1.0").unwrap(), ("e".to_string(), 1.0));
        assert!(parse_param("e").is_err());
        assert!(parse_param("e=x").is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "deltacert", "certify", "--model", "fragile-ball", "--param", "band=0.001", "--seed", "7", "--strict-annulus",
        ])
        .unwrap();
        let cfg = resolve_config(&cli.command).unwrap();
        assert_eq!(cfg.model.name, crate::models::ModelKind::FragileBall);
        assert_eq!(cfg.model.params["band"], 0.001);
        assert_eq!(cfg.seed, 7);
        assert!(cfg.certify.strict_annulus);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run(["deltacert"]), EXIT_USAGE);
        assert_eq!(run(["deltacert", "find-orbit", "--config", "/nonexistent/run.json"]), EXIT_USAGE);
        assert_eq!(run(["deltacert", "find-orbit", "--model", "walker"]), EXIT_USAGE);
        assert_eq!(run(["deltacert", "--help"]), EXIT_OK);
    }
}
