//! Command-line driver: configuration, orchestration and result files.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

pub use commands::Status;
pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "chazy", version, about = "Hyperbolic n-body scattering computed at infinity")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one orbit and write its trajectory.
    Simulate(CommonArgs),
    /// Compute the scattering map of one orbit.
    Scatter(CommonArgs),
    /// Scatter a grid of seeds around one past equilibrium.
    Sweep(CommonArgs),
    /// Run the acceptance suite.
    Verify(CommonArgs),
    /// Compare the numeric pipeline with the closed-form two-body orbit.
    KeplerCheck(CommonArgs),
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Simulate(a) | Command::Scatter(a) | Command::Sweep(a) | Command::Verify(a) | Command::KeplerCheck(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Multiplies the integrator tolerances.
    #[arg(long, value_name = "FACTOR")]
    pub tol_scale: Option<f64>,
    /// Worker threads for seed fan-out (default: all cores).
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Seed scale, overriding the config.
    #[arg(long, value_name = "X")]
    pub seed_scale: Option<f64>,
}

/// Machine-readable failure, printed to stderr as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// `config` (exit code 2) or `run` (exit code 1).
    pub kind: String,
    pub field: Option<String>,
    pub message: String,
}

impl ErrorRecord {
    pub fn of(err: &anyhow::Error) -> Self {
        match err.downcast_ref::<ConfigError>() {
            Some(c) => Self { kind: "config".into(), field: Some(c.field.clone()), message: c.message.clone() },
            None => Self { kind: "run".into(), field: None, message: format!("{err:#}") },
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.kind == "config" {
            2
        } else {
            1
        }
    }
}

/// Reads the config and applies the command-line overrides.
pub fn load_config(args: &CommonArgs) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| ConfigError::new("--config", format!("{}: {e}", args.config.display())))?;
    let mut config = RunConfig::from_json(&text)?;
    if let Some(dir) = &args.out {
        config.output.dir = dir.clone();
    }
    if let Some(f) = args.tol_scale {
        if !(f > 0.0 && f.is_finite()) {
            return Err(ConfigError::new("--tol-scale", format!("must be positive, got {f}")).into());
        }
        config.tolerances = config.tolerances.scaled(f);
    }
    if let Some(x) = args.seed_scale {
        config.seed_scale = x;
        config.validate().map_err(|e| ConfigError::new("--seed-scale", e.message))?;
    }
    if args.workers == Some(0) {
        return Err(ConfigError::new("--workers", "need at least one worker").into());
    }
    Ok(config)
}

/// Runs a parsed command line on a worker pool of the requested size.
pub fn run(cli: &Cli) -> Result<Status> {
    let args = cli.command.args();
    let config = load_config(args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.workers {
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Simulate(_) => commands::simulate(&config),
        Command::Scatter(_) => commands::scatter(&config),
        Command::Sweep(_) => commands::sweep(&config),
        Command::Verify(_) => commands::verify(&config),
        Command::KeplerCheck(_) => commands::kepler_check(&config),
    })
}
