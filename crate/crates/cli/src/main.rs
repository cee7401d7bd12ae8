//! `flowrecon` command-line driver: data generation, flow training,
//! reconstruction and evaluation experiments driven by one TOML config.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Method};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "flowrecon", version, about = "Flow-constrained undersampled MRI reconstruction experiments")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the training and test phantom sets.
    GenData,
    /// Train the flow and write a checkpoint.
    Train,
    /// Draw samples from a trained flow.
    Sample,
    /// Generate and save the sampling mask.
    Mask,
    /// Reconstruct one test phantom from simulated measurements.
    Reconstruct {
        #[arg(long)]
        method: Option<Method>,
    },
    /// Latent and Haar truncation study on the test set.
    TruncateStudy {
        /// Kept fractions in percent, e.g. `50,25`.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Pixelwise bias and variance over noise realizations.
    BiasVariance {
        #[arg(long)]
        method: Option<Method>,
    },
    /// Grid search over sampling ratio, SNR and regularisation weights.
    Sweep {
        #[arg(long)]
        method: Option<Method>,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("FLOWRECON_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("FLOWRECON_THREADS: expected a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("FLOWRECON_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    let method = match &cli.command {
        Command::Reconstruct { method } | Command::BiasVariance { method } | Command::Sweep { method } => {
            method.unwrap_or(cfg.recon.method)
        }
        _ => cfg.recon.method,
    };
    cfg.recon.method = method;
    if let Command::TruncateStudy { fractions: Some(f) } = &cli.command {
        cfg.evaluation.fractions = f.clone();
    }
    cfg.validate()?;
    commands::prepare_output(&cfg)?;
    log::info!("output directory {}", cfg.output_dir.display());

    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Sample => commands::sample(&cfg),
        Command::Mask => commands::mask(&cfg),
        Command::Reconstruct { .. } => commands::reconstruct(&cfg, method),
        Command::TruncateStudy { .. } => commands::truncate_study(&cfg, &cfg.evaluation.fractions),
        Command::BiasVariance { .. } => commands::bias_variance(&cfg, method),
        Command::Sweep { .. } => commands::sweep_cmd(&cfg, method),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
