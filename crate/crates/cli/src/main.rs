use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpse::commands;
use dpse::config::{Method, ScenarioConfig, CONFIG_KEYS_HELP};
use dpse::CliError;

/// Differentially private state estimation for a radial distribution feeder.
#[derive(Debug, Parser)]
#[command(name = "dpse", version, after_help = CONFIG_KEYS_HELP)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Scenario config file (TOML); the built-in default scenario is used when omitted
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed, overrides mc.seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory, overrides output.dir
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print Laplace scales, meter noise variances and composed privacy budgets
    #[command(after_help = CONFIG_KEYS_HELP)]
    Calibrate,
    /// Estimate the loads from a measurement file (or from simulated measurements)
    #[command(after_help = CONFIG_KEYS_HELP)]
    Estimate {
        /// CSV with header `kind,location,value`: one substation row (location 0) and one
        /// meter row per location 1..N. Simulated from the seed when omitted.
        #[arg(long, value_name = "PATH")]
        measurements: Option<PathBuf>,
        /// Estimator(s) to run, overrides estimation.method
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Write privacy/accuracy trade-off curves, one CSV per (eta, zeta) pair
    #[command(after_help = CONFIG_KEYS_HELP)]
    Tradeoff {
        /// Use the exact baseline inversion instead of the small-customer approximation
        #[arg(long)]
        exact_eps0: bool,
    },
    /// Run the verification suite; exit status 1 if any check fails
    #[command(after_help = CONFIG_KEYS_HELP)]
    Verify {
        /// Estimator(s) in the Monte Carlo comparison, overrides estimation.method
        #[arg(long, value_enum)]
        method: Option<Method>,
        /// Monte Carlo trials, overrides mc.trials
        #[arg(long, value_name = "N")]
        trials: Option<usize>,
        /// Worker streams, overrides mc.workers
        #[arg(long, value_name = "N")]
        workers: Option<usize>,
        /// Shrink the calibrated Laplace scales to 90% in the mechanism checks
        #[arg(long)]
        negative_control: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.global.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::builtin(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.mc.seed = seed;
    }
    if let Some(out) = cli.global.out {
        cfg.output.dir = out;
    }
    match cli.command {
        Command::Calibrate => print!("{}", commands::calibrate(&cfg)?),
        Command::Estimate { measurements, method } => {
            if let Some(m) = method {
                cfg.estimation.method = m;
            }
            print!("{}", commands::estimate(&cfg, measurements.as_deref())?);
        }
        Command::Tradeoff { exact_eps0 } => print!("{}", commands::tradeoff(&cfg, exact_eps0)?),
        Command::Verify {
            method,
            trials,
            workers,
            negative_control,
        } => {
            if let Some(m) = method {
                cfg.estimation.method = m;
            }
            if let Some(t) = trials {
                cfg.mc.trials = t;
            }
            if let Some(w) = workers {
                cfg.mc.workers = w;
            }
            let outcome = commands::verify(&cfg, negative_control)?;
            print!("{}", outcome.report);
            if !outcome.failed.is_empty() {
                return Err(CliError::VerificationFailed(outcome.failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dpse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
