//! Command-line front end for distributionally robust treatment rules:
//! evaluate a rule's worst-case welfare, search a policy class, trace
//! worst-case welfare over a radius grid, verify closed forms against the
//! transport adversary, and generate synthetic datasets.

mod commands;
mod config;
mod data_io;

use clap::{Parser, Subcommand};
use commands::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rpolicy",
    version,
    about = "Distributionally robust treatment rules over Wasserstein neighborhoods"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Declarative TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override input.path.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Override output.path.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Override neighborhood.epsilon.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Override run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override run.threads (0 = default pool).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Worst-case welfare of a single rule.
    Evaluate,
    /// Exhaustive robust maximization over a policy class.
    Search,
    /// Worst-case welfare per rule over an epsilon grid (CSV).
    Curve,
    /// Compare a closed-form criterion against the transport adversary.
    OracleCheck,
    /// Draw a synthetic dataset with known ground truth.
    Generate,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let config_path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = config::load(config_path)?;
    config.apply(&config::Overrides {
        input: cli.input.clone(),
        output: cli.output.clone(),
        epsilon: cli.epsilon,
        seed: cli.seed,
        threads: cli.threads,
    });
    if let Some(threads) = config.run.threads.filter(|&t| t > 0) {
        // Build the global pool once; later calls are a no-op.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Evaluate => commands::cmd_evaluate(&config),
        Command::Search => commands::cmd_search(&config),
        Command::Curve => commands::cmd_curve(&config),
        Command::OracleCheck => commands::cmd_oracle_check(&config),
        Command::Generate => commands::cmd_generate(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
