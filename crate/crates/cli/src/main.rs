//! `inhibit`: generate the mixed-numbers dataset, train MoE models with
//! inhibition gating, and analyze trained router inputs.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use inhibit_core::{Error, InhibitionMode};

#[derive(Parser)]
#[command(name = "inhibit", version, about = "Mixture-of-Experts routing with inhibition gating")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mixed digits/squares dataset as a MIXN file.
    GenData {
        /// Directory holding train-images-idx3-ubyte and train-labels-idx1-ubyte.
        #[arg(long)]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use only the first N digits (and as many squares).
        #[arg(long)]
        digits: Option<usize>,
    },
    /// Train one configuration over several seeds.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `model.inhibition`.
        #[arg(long)]
        inhibition: Option<InhibitionMode>,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Print the default configuration and exit.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Write figure2.csv and figure3.csv for a gate-bearing checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        thresholds: usize,
    },
    /// Train every inhibition mode with the same configuration.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Modes to run, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = InhibitionMode::ALL)]
        modes: Vec<InhibitionMode>,
        /// Also train the single-MLP baseline.
        #[arg(long)]
        baseline: bool,
    },
}

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Contract(_) | Error::Format { .. } => 2,
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            mnist_dir,
            out,
            seed,
            digits,
        } => commands::gen_data(&mnist_dir, &out, seed, digits),
        Command::Train {
            config,
            inhibition,
            seed,
            print_defaults,
        } => {
            if print_defaults {
                print!("{}", config::RunConfig::default().to_toml());
                Ok(())
            } else {
                commands::train(config.as_deref(), inhibition, seed)
            }
        }
        Command::Analyze {
            checkpoint,
            dataset,
            out,
            thresholds,
        } => commands::analyze(&checkpoint, &dataset, out.as_deref(), thresholds),
        Command::Sweep {
            config,
            modes,
            baseline,
        } => commands::sweep(config.as_deref(), &modes, baseline),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
