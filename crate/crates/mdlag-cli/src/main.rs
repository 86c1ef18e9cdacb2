//! `mdlag` command-line tool: simulate datasets, fit models, predict
//! held-out activity and run the runtime and bias studies.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 resource guard. `MDLAG_THREADS` caps the worker threads.

mod cli;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

use cli::{Cli, Command};
use error::{CliError, CliResult, EXIT_CONFIG};

fn thread_count(deterministic: bool) -> CliResult<Option<usize>> {
    if deterministic {
        return Ok(Some(1));
    }
    match std::env::var("MDLAG_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("MDLAG_THREADS must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let deterministic = matches!(&cli.command, Command::Fit(a) if a.deterministic);
    if let Some(n) = thread_count(deterministic)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Predict(a) => commands::predict(a),
        Command::Bench(a) => commands::bench(a),
        Command::BiasSweep(a) => commands::bias_sweep(a),
        Command::Finetune(a) => commands::finetune(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
