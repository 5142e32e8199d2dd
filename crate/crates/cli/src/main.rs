//! `ratecate` command-line front end.

mod commands;
mod config;
mod provenance;
mod report;

use std::process::ExitCode;

use clap::Parser;
use config::{Cli, Command, RunConfig};
use ratecate::{Error, Result};
use serde_json::json;

fn install_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let run = match &cli.command {
        Command::Fit(a) => RunConfig::fit(a)?,
        Command::Validate(a) => RunConfig::validate(a)?,
        Command::Simulate(a) => RunConfig::simulate(a)?,
        Command::Toy(a) => RunConfig::toy(a)?,
        Command::Check(a) => RunConfig::check(a)?,
    };
    install_pool(run.jobs)?;
    match cli.command {
        Command::Fit(_) => commands::fit(run),
        Command::Validate(_) => commands::validate(run),
        Command::Simulate(_) => commands::simulate(run),
        Command::Toy(_) => commands::toy(run),
        Command::Check(_) => commands::check(run),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "kind": e.kind(), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
