//! Experiment runner for the infinite-server queue limit engines.

// NaN-rejecting guards, as in the core crate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EXIT_CONFIG, EXIT_NUMERICAL};
use config::ExperimentConfig;
use mginf_core::CoreError;
use output::{OutputFormat, OutputSink};

/// A canonical example configuration: unit-rate Poisson arrivals, unit
/// exponential service, empty initial profile.
pub const CANONICAL_CONFIG: &str = include_str!("../configs/canonical.json");

#[derive(Parser)]
#[command(
    name = "mginf",
    about = "Measure-valued simulation of the M/GI/∞ queue with fluid and diffusion limit engines",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format for data artifacts.
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured ensemble and dump raw values, summaries and one
    /// example path trace.
    Simulate(RunArgs),
    /// Evaluate the fluid performance curves on a time grid.
    Fluid(RunArgs),
    /// Sample the Gaussian limit process and report exact/truncated
    /// variances with sample quantiles.
    Diffusion(RunArgs),
    /// Acceptance-grade comparison of ensemble means against the fluid
    /// limit; exit 4 when any cell strays beyond four standard errors.
    ValidateFluid(RunArgs),
    /// Acceptance-grade comparison of rescaled residuals against the
    /// Gaussian limit; exit 4 on variance or distribution-shape violations.
    ValidateClt(RunArgs),
    /// Deterministic analytic/property battery; nonzero exit on any failure.
    Selftest {
        /// Output directory for the residual report; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                AppError::Config(_) => EXIT_CONFIG,
                AppError::Core(CoreError::QuadratureNonConvergence { .. })
                | AppError::Core(CoreError::OrthogonalityLoss { .. }) => EXIT_NUMERICAL,
                AppError::Core(_) => EXIT_CONFIG,
                AppError::Io(_) => 1,
            }
        }
    };
    ExitCode::from(code)
}

enum AppError {
    Config(String),
    Core(CoreError),
    Io(std::io::Error),
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "{m}"),
            AppError::Core(e) => write!(f, "{e}"),
            AppError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        AppError::Core(e)
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e)
    }
}

fn run(cli: Cli) -> Result<u8, AppError> {
    match cli.command {
        Command::Selftest { out } => {
            let sink = OutputSink::new(out)?;
            Ok(commands::cmd_selftest(&sink)?)
        }
        Command::Simulate(args) => with_config(args, commands::cmd_simulate),
        Command::Fluid(args) => with_config(args, commands::cmd_fluid),
        Command::Diffusion(args) => with_config(args, commands::cmd_diffusion),
        Command::ValidateFluid(args) => {
            with_config(args, |cfg, seed, sink, _| commands::cmd_validate_fluid(cfg, seed, sink))
        }
        Command::ValidateClt(args) => {
            with_config(args, |cfg, seed, sink, _| commands::cmd_validate_clt(cfg, seed, sink))
        }
    }
}

fn with_config(
    args: RunArgs,
    f: impl Fn(&ExperimentConfig, u64, &OutputSink, OutputFormat) -> mginf_core::Result<u8>,
) -> Result<u8, AppError> {
    let raw = std::fs::read_to_string(&args.config)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&raw)
        .map_err(|e| AppError::Config(format!("invalid config {}: {e}", args.config.display())))?;
    config
        .validate()
        .map_err(|e| AppError::Config(format!("invalid config: {e}")))?;
    let seed = args.seed.unwrap_or(config.master_seed);
    let sink = OutputSink::new(args.out)?;
    Ok(f(&config, seed, &sink, args.format)?)
}
