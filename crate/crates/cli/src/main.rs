//! `bilevel`: run, certify, verify, sweep and check bilevel proximal
//! gradient experiments described by a JSON config.

mod certify;
mod check;
mod config;
mod error;
mod output;
mod run;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Experiment, Globals};
use crate::error::{CliError, CliResult};
use crate::sweep::SweepMode;
use crate::verify::VerifyPaths;

#[derive(Debug, Parser)]
#[command(name = "bilevel", version, about = "Bilevel proximal gradient experiments with ISS certificates")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: config `out`, else ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for every sampled quantity; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Attach the reference oracle to runs and fill the measurement columns.
    #[arg(long, global = true)]
    with_oracle: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the bilevel iteration; writes trace.csv and summary.json.
    Run {
        /// Disturbance amplitude on the outer gradient; 0 disables it.
        #[arg(long)]
        noise: Option<f64>,
        /// Inner steps per outer step; overrides the config.
        #[arg(long)]
        kappa: Option<usize>,
    },
    /// Estimate the constants and gains; writes certificate.json.
    Certify,
    /// Check a stored trace against a certificate; writes iss_report.json.
    Verify {
        /// [default: <out>/trace.csv]
        #[arg(long)]
        trace: Option<PathBuf>,
        /// [default: summary.json next to the trace]
        #[arg(long)]
        summary: Option<PathBuf>,
        /// [default: <out>/certificate.json]
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Sweep κ or the noise amplitude; writes sweep.csv.
    Sweep {
        #[arg(long, value_enum, default_value_t = SweepMode::Kappa)]
        mode: SweepMode,
    },
    /// Sampled property suites on the configured problem; writes check_report.json.
    Check,
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let globals = Globals {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        with_oracle: cli.with_oracle,
    };
    match cli.command {
        Command::Run { noise, kappa } => run::cmd_run(&mut Experiment::load(&globals)?, noise, kappa),
        Command::Certify => certify::cmd_certify(&Experiment::load(&globals)?),
        Command::Verify { trace, summary, certificate } => {
            verify::cmd_verify(&globals, VerifyPaths { trace, summary, certificate })
        }
        Command::Sweep { mode } => sweep::cmd_sweep(&Experiment::load(&globals)?, mode),
        Command::Check => check::cmd_check(&Experiment::load(&globals)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))
            .and_then(|pool| pool.install(|| dispatch(cli))),
        None => dispatch(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
