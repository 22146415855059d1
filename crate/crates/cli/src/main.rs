//! `tunnelclock`: configuration-driven runs of the stationary, ensemble,
//! Gross-Pitaevskii and knife-edge calculations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O error.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tunnelclock::ErrorKind;

#[derive(Parser)]
#[command(name = "tunnelclock", version, about = "Larmor-clock tunneling-time calculations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monochromatic transmission and Larmor times over a velocity grid.
    StationaryScan { config: PathBuf },
    /// Times averaged over incident velocity distributions.
    Ensemble { config: PathBuf },
    /// One full Gross-Pitaevskii Larmor experiment.
    GpeRun { config: PathBuf },
    /// Gross-Pitaevskii Larmor experiments over several incident velocities.
    GpeScan { config: PathBuf },
    /// Knife-edge fit of a barrier-height scan, optionally with a height calibration.
    KnifeEdge { config: PathBuf },
    /// Field snapshots from one Gross-Pitaevskii run.
    Snapshot { config: PathBuf },
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(tunnelclock::Error),
    /// A core error while reading an input file.
    Input { path: PathBuf, source: tunnelclock::Error },
    /// A core error from one run of a scan.
    Run { index: usize, v0: f64, source: tunnelclock::Error },
}

impl From<tunnelclock::Error> for CliError {
    fn from(e: tunnelclock::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Input { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Run { index, v0, source } => write!(f, "run {index} (v0 = {v0} mm/s): {source}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        let kind = match self {
            CliError::Config(_) => ErrorKind::Config,
            CliError::Io(_) => ErrorKind::Io,
            CliError::Core(e) | CliError::Input { source: e, .. } | CliError::Run { source: e, .. } => e.kind(),
        };
        match kind {
            ErrorKind::Config => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Io => 4,
        }
    }
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let path = match &cli.command {
        Command::StationaryScan { config }
        | Command::Ensemble { config }
        | Command::GpeRun { config }
        | Command::GpeScan { config }
        | Command::KnifeEdge { config }
        | Command::Snapshot { config } => config,
    };
    let cfg = config::load(path)?;
    if let Some(n) = cfg.parallelism {
        if n == 0 {
            return Err(CliError::Config("parallelism must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set parallelism: {e}")))?;
    }
    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    match cli.command {
        Command::StationaryScan { .. } => commands::stationary_scan(&cfg, &out),
        Command::Ensemble { .. } => commands::ensemble(&cfg, &out),
        Command::GpeRun { .. } => commands::gpe_run(&cfg, &out),
        Command::GpeScan { .. } => commands::gpe_scan(&cfg, &out),
        Command::KnifeEdge { .. } => commands::knife_edge(&cfg, &out),
        Command::Snapshot { .. } => commands::snapshot(&cfg, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tunnelclock: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
