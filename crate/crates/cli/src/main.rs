//! `diolab <command>`: runs one pipeline and writes CSV/JSON plus a manifest.
//! Exit status 0 when every assertion holds, 1 on a failed assertion or a
//! violated invariant, 2 on a usage or configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diolab::io::{Command, RunConfig};
use diolab::params::GrowthMode;
use diolab::LabError;

#[derive(Parser, Debug)]
#[command(name = "diolab", version, about = "Finite-stage Diophantine approximation sets, measures and spectra")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Spectrum cache directory (DIOLAB_CACHE takes precedence).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    #[arg(long, global = true)]
    stages: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    kmax: Option<i64>,
    /// Spectrum error budget cap.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Build the staged interval sets and check separation.
    Construct,
    /// Build the measure tree and check Frostman bounds.
    Measure,
    /// Build the truncated spectrum (cached).
    Spectrum,
    /// Box-count and Fourier-decay dimension estimates.
    Dims,
    /// Sumset cover sweep and projection regime table.
    Project,
    /// Knapp-type restriction ratios.
    Restrict,
    /// Sequence, windows and hypotheses for a parameter set.
    Report,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Strict,
    Relaxed,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Construct => Command::Construct,
            Cmd::Measure => Command::Measure,
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Dims => Command::Dims,
            Cmd::Project => Command::Project,
            Cmd::Restrict => Command::Restrict,
            Cmd::Report => Command::Report,
        }
    }
}

fn config(cli: &Cli) -> Result<RunConfig, LabError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.command = Some(cli.command.command());
    if let Some(o) = &cli.out {
        cfg.out = o.display().to_string();
    }
    if let Some(c) = &cli.cache {
        cfg.cache = Some(c.display().to_string());
    }
    if let Some(s) = cli.stages {
        cfg.stages = s;
    }
    if let Some(m) = cli.mode {
        cfg.growth = match m {
            Mode::Strict => GrowthMode::Strict,
            Mode::Relaxed => GrowthMode::Relaxed,
        };
    }
    if let Some(k) = cli.kmax {
        cfg.kmax = Some(k);
    }
    if let Some(t) = cli.tolerance {
        if !(t > 0.0) {
            return Err(LabError::Config("--tolerance must be positive".into()));
        }
        cfg.tolerance = t;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match diolab::run::run(&cfg) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for a in &outcome.summary.assertions {
                println!("{} {} [{}]: {}", if a.pass { "PASS" } else { "FAIL" }, a.name, a.anchor, a.detail);
            }
            println!("wrote {} files to {}", outcome.files.len() + 1, outcome.out.display());
            if outcome.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ LabError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
