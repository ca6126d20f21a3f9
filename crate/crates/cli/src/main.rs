mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

/// Latent-action reinforcement learning for graph combinatorial optimization.
#[derive(Debug, Parser)]
#[command(name = "lagco", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample scenario instances
    Generate(Flags),
    /// Compute oracle score bounds for every instance
    Sweep(Flags),
    /// Pre-train graph auto-encoders on environment snapshots
    Pretrain(Flags),
    /// Build latent action spaces and report cmp@k
    Latent(Flags),
    /// Train an agent under a generalization strategy
    Train(Flags),
    /// Evaluate trained agents and summarize scores
    Eval(Flags),
    /// Time action selection over a size grid and fit a power law
    Scale(Flags),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (flags, f): (&Flags, fn(&RunConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::Generate(f) => (f, commands::generate),
        Command::Sweep(f) => (f, commands::sweep),
        Command::Pretrain(f) => (f, commands::pretrain),
        Command::Latent(f) => (f, commands::latent),
        Command::Train(f) => (f, commands::train),
        Command::Eval(f) => (f, commands::eval),
        Command::Scale(f) => (f, commands::scale),
    };
    let cfg = RunConfig::resolve(flags)?;
    f(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
