//! `brk` — boundary Riemann problems with viscous layers.
//!
//! Each subcommand runs one problem kind from a TOML configuration,
//! optionally adjusted with repeated `--set key=value` overrides (the
//! command line wins over the file, and the subcommand itself fixes
//! `problem.kind`).  Results land in `output.dir`, falling back to
//! `$BRK_OUTPUT_DIR` and then the working directory: the resolved
//! configuration is echoed to `effective-config.toml`, machine-readable
//! results go to `summary.json`, and numeric tables are written as CSV
//! with 17 significant digits.
//!
//! Exit status: `0` when every validation passed, `1` on validation or
//! solver failure (the summary records the error), `2` on configuration
//! or I/O problems.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ProblemKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "brk",
    version,
    about = "Boundary Riemann problems: exact wave fans, viscous layers, and limit experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; may be omitted when --set covers everything.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set numerics.tol_rh=1e-9.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a two-state Riemann problem on the whole line.
    Riemann(RunArgs),
    /// Solve the quarter-plane problem: wave fan plus boundary layer.
    BoundaryRiemann(RunArgs),
    /// Run the time-dependent viscous approximation at one epsilon.
    ClassicalSim(RunArgs),
    /// Solve the self-similar viscous profile at one epsilon.
    SelfsimilarSim(RunArgs),
    /// Sweep epsilon and compare both regularisations with the exact fan.
    CompareLimits(RunArgs),
    /// Measure how the boundary trace depends on the viscosity matrix.
    BDependence(RunArgs),
    /// Solve the quarter-plane problem and emit the validation report only.
    Validate(RunArgs),
    /// Run the bundled acceptance battery.
    Suite(RunArgs),
}

impl Command {
    fn split(&self) -> (ProblemKind, &RunArgs) {
        match self {
            Command::Riemann(a) => (ProblemKind::Riemann, a),
            Command::BoundaryRiemann(a) => (ProblemKind::BoundaryRiemann, a),
            Command::ClassicalSim(a) => (ProblemKind::ClassicalSim, a),
            Command::SelfsimilarSim(a) => (ProblemKind::SelfsimilarSim, a),
            Command::CompareLimits(a) => (ProblemKind::CompareLimits, a),
            Command::BDependence(a) => (ProblemKind::BDependence, a),
            Command::Validate(a) => (ProblemKind::Validate, a),
            Command::Suite(a) => (ProblemKind::Suite, a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    let config = match RunConfig::load(args.config.as_deref(), &args.set, kind) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run::execute(&config) {
        Ok(code) => ExitCode::from(u8::try_from(code).unwrap_or(1)),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
