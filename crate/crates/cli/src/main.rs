//! `facesim` command-line front end.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{Overrides, Run, SceneKind};
use config::{Config, SCHEMA_VERSION};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "facesim", version, about = "Actuation-driven soft-tissue simulation with contact")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed overriding every seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Force contact handling on or off.
    #[arg(long, global = true, value_enum)]
    contact: Option<Switch>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic multi-identity dataset.
    GenData,
    /// Train per-identity canonical mappings and warp caches.
    TrainMap,
    /// Train the actuation model (stage one, two or both).
    TrainModel,
    /// Simulate expressions on one identity.
    Simulate,
    /// Expressions of `source` on the geometry and style of `identity`.
    Retarget,
    /// Expressions and geometry of `identity` with the style of `source`.
    TransferStyle,
    /// Compare adjoint gradients with finite differences.
    Gradcheck,
    /// Time the squash scene: sweeps, CG iterations, pairs per iterate.
    Bench,
}

impl Command {
    /// Commands that run on built-in scenes without a configuration file.
    fn needs_config(self) -> bool {
        !matches!(self, Command::Gradcheck | Command::Bench)
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let (config, text) = match &cli.config {
        Some(p) => Config::load(p)?,
        None if cli.command.needs_config() => return Err(CliError::Config("--config is required for this command".into())),
        None => (
            Config {
                schema_version: SCHEMA_VERSION,
                ..Config::default()
            },
            String::new(),
        ),
    };
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| CliError::Config(format!("--workers: {e}")))?;
    }
    let run = Run {
        config: &config,
        config_text: &text,
        overrides: Overrides {
            seed: cli.seed,
            contact: cli.contact.map(|s| matches!(s, Switch::On)),
        },
        out: &cli.out,
    };
    let seed = match cli.command {
        Command::GenData => commands::gen_data(&run)?,
        Command::TrainMap => commands::train_map(&run)?,
        Command::TrainModel => commands::train_model(&run)?,
        Command::Simulate => commands::scene(&run, SceneKind::Simulate)?,
        Command::Retarget => commands::scene(&run, SceneKind::Retarget)?,
        Command::TransferStyle => commands::scene(&run, SceneKind::TransferStyle)?,
        Command::Gradcheck => commands::gradcheck_cmd(&run)?,
        Command::Bench => commands::bench(&run)?,
    };
    log::info!("done (seed {seed}); outputs in {}", cli.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
