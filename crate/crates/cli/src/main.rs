use anyhow::Result;
use clap::{Parser, Subcommand};
use fedcell_cli::commands;
use fedcell_cli::config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Indoor small-cell power control: simulation, DQN training, federation.
#[derive(Parser)]
#[command(name = "fedcell", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one independent agent per configured room and seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write into a non-empty output directory.
        #[arg(long)]
        force: bool,
    },
    /// Run federated training over the configured rooms.
    Federate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Roll out a frozen policy (checkpoint or baseline) and emit metrics.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint file, or a directory of ckpt_<room>_seed<k>.ckpt files.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Fine-tune a global checkpoint in the adaptation room next to a
    /// scratch-initialised twin.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Summarise metrics rows into a policy-by-room table.
    Report {
        /// Directory holding metrics.csv files from eval runs.
        #[arg(long)]
        metrics: PathBuf,
        /// Optional path for the CSV form of the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            force,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_train(&cfg, &out, seed, force)
        }
        Command::Federate {
            config,
            out,
            seed,
            force,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_federate(&cfg, &out, seed, force)
        }
        Command::Eval {
            config,
            out,
            checkpoint,
            seed,
            force,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_eval(&cfg, &out, checkpoint.as_deref(), seed, force)
        }
        Command::Adapt {
            config,
            out,
            checkpoint,
            seed,
            force,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            commands::cmd_adapt(&cfg, &out, &checkpoint, seed, force)
        }
        Command::Report { metrics, out } => {
            let text = commands::cmd_report(&metrics, out.as_deref())?;
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FEDCELL_LOG")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
