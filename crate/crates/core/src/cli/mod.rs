//! `qisim` command line: one subcommand per run mode, each driven by a JSON
//! configuration file.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure or a
//! failed verdict (outputs are still written), 3 I/O error.

mod config;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    parse_config, parse_config_with, BathConfig, ComplexValue, CompositeStateConfig, ConfigFile, DensityConfig,
    DosConfig, EnvironmentConfig, EnvironmentModel, FamilyConfig, GridConfig, InitialChoice, KernelConfig,
    KernelsConfig, MatrixConfig, MixturePartConfig, Mode, NumericConfig, OutputConfig, Overrides, PairKernelConfig,
    QuadratureConfig, RadialConfig, RecurrenceConfig, RunConfig, SampledBathConfig, SystemConfig, WindowConfig,
};
pub use run::{execute, write_outputs, RunOutcome, DEFAULT_OUT_DIR};

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "qisim", version, about = "Equilibration of quasi-isolated quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate a decoherence kernel D(t).
    Kernel(RunArgs),
    /// Observable trajectory ⟨A(t)⟩ and its equilibrium value.
    Trajectory(RunArgs),
    /// Exact composite evolution against the spectral formula.
    OracleCompare(RunArgs),
    /// Average information sweep and its deficit bound.
    Information(RunArgs),
    /// Eigenstate-thermalization check on an energy window.
    Thermalize(RunArgs),
    /// Recurrence scan for a finite surrounding.
    Recurrence(RunArgs),
    /// Density of states from a radial dispersion.
    Dos(RunArgs),
}

impl Command {
    fn split(&self) -> (Mode, &RunArgs) {
        match self {
            Command::Kernel(a) => (Mode::Kernel, a),
            Command::Trajectory(a) => (Mode::Trajectory, a),
            Command::OracleCompare(a) => (Mode::OracleCompare, a),
            Command::Information(a) => (Mode::Information, a),
            Command::Thermalize(a) => (Mode::Thermalize, a),
            Command::Recurrence(a) => (Mode::Recurrence, a),
            Command::Dos(a) => (Mode::Dos, a),
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub t_max: Option<f64>,
    #[arg(long)]
    pub t_steps: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Runs a parsed command; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match run_inner(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            let failed: Vec<&String> = outcome.verdicts.iter().filter(|(_, &ok)| !ok).map(|(k, _)| k).collect();
            if failed.is_empty() {
                0
            } else {
                for k in failed {
                    eprintln!("verdict failed: {k}");
                }
                2
            }
        }
        Err(e) => {
            eprintln!("error ({}): {e}", cli.command.split().0.name());
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli) -> Result<RunOutcome> {
    let (mode, args) = cli.command.split();
    let text = std::fs::read(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let text = String::from_utf8(text).map_err(|e| Error::config(".", format!("config is not UTF-8: {e}")))?;
    let overrides = Overrides {
        t_max: args.t_max,
        t_steps: args.t_steps,
        tolerance: args.tolerance,
        out: args.out.clone(),
    };
    let base = args.config.parent();
    let cfg = parse_config_with(&text, Some(mode), &overrides, base)?;
    let outcome = execute(&cfg)?;
    let dir = cfg.file.output.dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    write_outputs(&dir, text.as_bytes(), &cfg, &outcome)?;
    Ok(outcome)
}

/// Entry point used by the binary.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
