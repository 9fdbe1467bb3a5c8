//! Experiment harness: seeded runs, CSV traces, gradient checks, baselines,
//! and KKT reports.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config, Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "pdd-ssca", version, about = "Two-stage stochastic solver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment family.
    #[arg(long)]
    experiment: Option<String>,
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = number of logical processors). Results are
    /// identical for every worker count.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Outer iteration cap (overrides the config file).
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the outer algorithm and write trace.csv + final.json.
    Run(CommonOpts),
    /// Compare reverse-mode gradients against the finite-difference oracle.
    CheckGradients(CommonOpts),
    /// Run the Example-1 baselines on a shared seeded sample set.
    Baseline(CommonOpts),
    /// Recompute the KKT report of a saved final iterate on a fresh batch.
    Report(CommonOpts),
}

fn resolve(opts: &CommonOpts) -> Result<RunConfig, config::ConfigError> {
    let mut rc = RunConfig::default();
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config::ConfigError(format!("cannot read {}: {e}", path.display())))?;
        parse_config(&text, &mut rc)?;
    }
    if let Some(e) = &opts.experiment {
        rc.experiment = Experiment::parse(e)?;
    }
    if let Some(seed) = opts.seed {
        rc.solver.seed = seed;
    }
    if let Some(iters) = opts.max_iters {
        rc.solver.max_iters = iters;
    }
    Ok(rc)
}

fn install_workers(workers: usize) {
    if workers > 0 {
        // ignore failure: the global pool can only be set once (tests)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let opts = match &cli.command {
        Command::Run(o) | Command::CheckGradients(o) | Command::Baseline(o) | Command::Report(o) => o,
    };
    let rc = match resolve(opts) {
        Ok(rc) => rc,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(1);
        }
    };
    install_workers(opts.workers);
    let result = match &cli.command {
        Command::Run(o) => experiments::run_experiment(&rc, &o.out),
        Command::CheckGradients(_) => experiments::check_gradients(),
        Command::Baseline(o) => experiments::run_baselines(&rc, &o.out),
        Command::Report(o) => experiments::report(&rc, &o.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(experiments::CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(1)
        }
        Err(experiments::CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
