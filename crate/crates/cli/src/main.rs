// SPDX-License-Identifier: MIT OR Apache-2.0

mod commands;
mod config;
mod fsio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand};

use commands::{layers, permute, profile, rerank, simulate, theory, validate, Ctx};
use config::CliError;

/// Positional attention profiling, reranking and theory checks
#[derive(Parser, Debug)]
#[command(name = "attnbasin", version)]
struct Cli {
    /// JSON config file; explicit flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for dump processing (0 = all cores)
    #[arg(long, global = true, env = "ATTNBASIN_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Validate(validate::ValidateArgs),
    Profile(profile::ProfileArgs),
    Basin(profile::BasinArgs),
    Rerank(rerank::RerankArgs),
    Layers(layers::LayersArgs),
    #[command(subcommand)]
    Theory(theory::TheoryCommand),
    Simulate(simulate::SimulateArgs),
    Permute(permute::PermuteArgs),
}

fn run(cli: &Cli) -> Result<ExitCode, CliError> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let ctx = Ctx {
        file: file.as_ref(),
        jobs: cli.jobs.unwrap_or(0),
    };
    match &cli.command {
        Command::Validate(a) => validate::run(a, &ctx),
        Command::Profile(a) => profile::run(a, &ctx),
        Command::Basin(a) => profile::run_basin(a, &ctx),
        Command::Rerank(a) => rerank::run(a, &ctx),
        Command::Layers(a) => layers::run(a, &ctx),
        Command::Theory(c) => theory::run(c, &ctx),
        Command::Simulate(a) => simulate::run(a, &ctx),
        Command::Permute(a) => permute::run(a, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(if code == 0 { 0 } else { 2 });
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
