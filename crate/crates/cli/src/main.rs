use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qsp_cli::{
    apply_tolerances, env_tolerance, list_families, load_config, run_eval, run_simulate, run_verify, write_output,
    CliError, RunOptions,
};

#[derive(Parser)]
#[command(name = "qsp", version, about = "Verify and simulate quadratic stochastic processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every family with its parameter signature.
    List,
    /// Run stochasticity and Kolmogorov-Chapman sweeps and write a JSON report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Turn grid-only warnings into construction errors.
        #[arg(long)]
        strict: bool,
        /// Tolerance for every check.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Write the trajectory of the configured simulation as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the family at one time pair; `.json` output selects JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::List => {
            print!("{}", list_families());
            Ok(0)
        }
        Command::Verify { config, strict, tol } => {
            let mut cfg = load_config(&config)?;
            let opts = RunOptions { strict, tol };
            apply_tolerances(&mut cfg, env_tolerance()?, &opts)?;
            let report = run_verify(&cfg, &opts)?;
            let json = report.to_json();
            match &cfg.output.report {
                Some(path) => write_output(path, &json)?,
                None => print!("{json}"),
            }
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!(
                    "check failed: {} max residual {} > {} ({} of {} points)",
                    c.check, c.max_residual, c.tol, c.failures, c.count
                );
            }
            Ok(if report.passed { 0 } else { 1 })
        }
        Command::Simulate { config, out } => {
            let cfg = load_config(&config)?;
            write_output(&out, &run_simulate(&cfg)?)?;
            Ok(0)
        }
        Command::Eval { config, s, t, out } => {
            let cfg = load_config(&config)?;
            let json = out.extension().is_some_and(|e| e == "json");
            write_output(&out, &run_eval(&cfg, s, t, json)?)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
