use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamsim_core::eval::Method;
use beamsim_core::HeadKind;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Position- and orientation-aided mmWave beam selection simulator
#[derive(Parser, Debug)]
#[command(name = "beamsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (TOML); built-in defaults when omitted
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Master seed, overriding the configuration
    #[arg(long)]
    seed: Option<u64>,

    /// Output file or directory
    #[arg(long, short)]
    out: Option<PathBuf>,

    /// Override a configuration value, e.g. `train.epochs=20`
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the effective configuration as TOML
    Config {
        #[command(flatten)]
        common: Common,
    },
    /// Generate a labeled dataset
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train one head on every fold and initialization
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Output-head structure: st, mt or emt
        #[arg(long)]
        head: HeadKind,
    },
    /// Build per-fold fingerprint tables
    GifpBuild {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate methods on the test folds and write the sweep CSV
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Directory holding trained models and tables
        #[arg(long)]
        artifacts: PathBuf,
        /// Comma-separated methods; the configured list when omitted
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Generate, train, build and evaluate in one go
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Reuse an existing dataset instead of generating one
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Also run the context-perturbation robustness sweep
        #[arg(long)]
        ci: bool,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] beamsim_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    fn exit_code(&self) -> u8 {
        use beamsim_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Core(E::Config(_) | E::InvalidArgument(_) | E::Dimension(_)) => 2,
            CliError::Core(E::Io(_) | E::Format(_)) => 3,
            CliError::Core(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
