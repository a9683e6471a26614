//! `pdflow`: run, sweep and check inertial primal-dual flows from TOML configs.
//!
//! Exit codes: 0 success or informational, 1 a verdict or check failed,
//! 2 runtime or configuration error. Tables go to stdout, diagnostics to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pdflow::experiments::{
    dump_defaults, format_rates, prediction_table, run_experiment, run_sweep, ExperimentError, ExperimentSpec,
    RunStatus,
};
use pdflow::verify::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "pdflow", version, about = "Inertial primal-dual flows with vanishing regularization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment document (TOML). Defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set params.s=0.7` or `--set s=0.7`. Repeatable; last wins.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output root; replaces `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Concurrent sweep runs. Defaults to the number of CPUs.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Seed for randomized fixtures; replaces `seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// More diagnostics on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one flow, write artifacts and print the rate report.
    Simulate,
    /// Run every cell of the `[sweep]` table and print the summary.
    Sweep,
    /// Print regime tags and predicted exponents without integrating.
    Rates,
    /// Run a self-check suite.
    Verify {
        #[arg(value_enum)]
        suite: SuiteArg,
    },
    /// Config helpers.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the default document with every field spelled out.
    DumpDefaults,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Saddle,
    Lemmas,
    Integrator,
}

impl From<SuiteArg> for Suite {
    fn from(s: SuiteArg) -> Self {
        match s {
            SuiteArg::Saddle => Suite::Saddle,
            SuiteArg::Lemmas => Suite::Lemmas,
            SuiteArg::Integrator => Suite::Integrator,
        }
    }
}

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, ExperimentError> {
    let mut spec = match &cli.config {
        Some(path) => ExperimentSpec::load(path, &cli.set)?,
        None => ExperimentSpec::from_overrides(&cli.set)?,
    };
    if let Some(out) = &cli.out {
        spec.output.dir = out.display().to_string();
    }
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn workers(cli: &Cli) -> usize {
    cli.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn run(cli: &Cli) -> Result<u8> {
    let code = match &cli.command {
        Command::Config {
            action: ConfigAction::DumpDefaults,
        } => {
            print!("{}", dump_defaults());
            0
        }
        Command::Rates => {
            print!("{}", prediction_table(&load_spec(cli)?)?);
            0
        }
        Command::Simulate => {
            let mut spec = load_spec(cli)?;
            if spec.sweep.take().is_some() {
                log::warn!("ignoring [sweep]; use `pdflow sweep` to run it");
            }
            let outcome = run_experiment(&spec).context("simulation failed")?;
            print!("{}", format_rates(&outcome.result));
            eprintln!("artifacts in {}", outcome.dir.display());
            match outcome.result.status {
                RunStatus::Fail => EXIT_FAIL,
                RunStatus::Pass | RunStatus::Informational => 0,
            }
        }
        Command::Sweep => {
            let spec = load_spec(cli)?;
            let outcome = run_sweep(&spec, workers(cli))?;
            print!("{}", outcome.summary);
            eprintln!("summary in {}", outcome.dir.join("summary.txt").display());
            if outcome.any_error() {
                EXIT_ERROR
            } else if outcome.any_failure() {
                EXIT_FAIL
            } else {
                0
            }
        }
        Command::Verify { suite } => {
            let report = run_suite((*suite).into(), &load_spec(cli)?)?;
            for check in &report.checks {
                println!("{check}");
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            eprintln!(
                "verify {}: {} of {} checks passed",
                report.suite.name(),
                report.checks.len() - failed,
                report.checks.len()
            );
            if failed > 0 {
                EXIT_FAIL
            } else {
                0
            }
        }
    };
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
