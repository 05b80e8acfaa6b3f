use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::ExperimentConfig;
use output::Run;

/// Monte Carlo homogenization of periodic stable-driven jump diffusions.
#[derive(Parser)]
#[command(name = "lvhg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the modelling assumptions of a config.
    Validate(Args),
    /// Estimate the invariant measure and mixing diagnostics.
    Invariant(Args),
    /// Solve the corrector equation.
    Corrector(Args),
    /// Compute the limit law and run the convergence sweep.
    Verify(Args),
    /// Merge the artifacts of an output directory.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` or `./out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub msg: String,
}

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_ACCEPTANCE: u8 = 4;

impl Failure {
    pub fn validation(msg: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, msg: msg.into() }
    }

    pub fn acceptance(msg: impl Into<String>) -> Self {
        Self { code: EXIT_ACCEPTANCE, msg: msg.into() }
    }

    /// Input problems map to 2, everything else to 3.
    pub fn from_core(e: lvhg_core::Error) -> Self {
        use lvhg_core::Error as E;
        let code = match e {
            E::InvalidStabilityIndex(_)
            | E::MalformedMeasure(_)
            | E::AsymmetricMeasure(_)
            | E::DegenerateSpectralMeasure { .. }
            | E::UnsupportedDimension(_)
            | E::DimensionMismatch { .. }
            | E::InvalidCoefficients(_)
            | E::SingularSigma(_)
            | E::InvalidConfig(_) => EXIT_VALIDATION,
            _ => EXIT_NUMERICAL,
        };
        Self { code, msg: e.to_string() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(f) = e.downcast_ref::<Failure>() {
        return f.code;
    }
    if let Some(c) = e.downcast_ref::<lvhg_core::Error>() {
        return Failure::from_core(c.clone()).code;
    }
    EXIT_NUMERICAL
}

fn run(cli: Cli) -> Result<()> {
    let (cmd, args) = match cli.command {
        Command::Validate(a) => ("validate", a),
        Command::Invariant(a) => ("invariant", a),
        Command::Corrector(a) => ("corrector", a),
        Command::Verify(a) => ("verify", a),
        Command::Report(a) => ("report", a),
    };
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let run = Run::new(cfg, out.clone())?;
    let ok = match cmd {
        "validate" => {
            if !commands::cmd_validate(&run)? {
                return Err(Failure::validation("assumption checks failed").into());
            }
            true
        }
        "invariant" => {
            commands::cmd_invariant(&run)?;
            true
        }
        "corrector" => commands::cmd_corrector(&run)?,
        "verify" => commands::cmd_verify(&run)?,
        _ => {
            if !commands::cmd_report(&run, &out)? {
                return Err(Failure::validation("artifacts from a different config").into());
            }
            true
        }
    };
    if !ok {
        return Err(Failure::acceptance(format!("{cmd}: acceptance check failed")).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
