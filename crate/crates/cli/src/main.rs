//! `dkoop`: run distributed Koopman learning experiments from the command line.

mod commands;
mod config;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig, Scale};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "dkoop",
    version,
    about = "Distributed Koopman operator learning with PI consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full experiment: spectra, difference matrix, fit trace, rollout error, report.
    Experiment,
    /// Run once per step fraction θ and report the observed contraction.
    AlphaSweep {
        /// Comma-separated θ values; overrides `thetas` in the config.
        #[arg(long, value_delimiter = ',')]
        theta: Vec<f64>,
    },
    /// Median wall-clock timings of the centralized and distributed solvers.
    Benchmark {
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Emit scenario frames only.
    Gen {
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Centralized least squares from X.csv and Y.csv into Kstar.csv.
    SolveCentral {
        #[arg(long)]
        x: Option<PathBuf>,
        #[arg(long)]
        y: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (cfg, base) = match &cli.config {
        Some(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::load(path)?, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    let overrides = Overrides {
        scale: cli.scale,
        seed: cli.seed,
        out: cli.out.clone(),
    };
    let mut res = cfg.resolve(&base, &overrides)?;
    match cli.command {
        Command::Experiment => commands::experiment(&res),
        Command::AlphaSweep { theta } => {
            if !theta.is_empty() {
                if theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
                    return Err(CliError::Config("--theta values must be positive".into()));
                }
                res.thetas = theta;
            }
            commands::alpha_sweep(&res)
        }
        Command::Benchmark { repeats } => {
            if let Some(r) = repeats {
                if r == 0 {
                    return Err(CliError::Config("--repeats must be at least 1".into()));
                }
                res.benchmark_repeats = r;
            }
            commands::benchmark(&res)
        }
        Command::Gen { frames } => {
            res.frames = frames.or(res.frames);
            commands::gen(&res)
        }
        Command::SolveCentral { x, y } => commands::solve_central(&res, x.as_deref(), y.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dkoop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
