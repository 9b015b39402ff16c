//! `supportnet` command-line runner.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

/// Class-incremental experiments with SVM-selected support data.
#[derive(Debug, Parser)]
#[command(name = "supportnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Experiment config file (key = value with [data], [model], [method], [optimizer]).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory holding the MNIST IDX files when the config names none.
    #[arg(long, env = "SUPPORTNET_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Number of sub-runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured method over the whole schedule.
    Run(Common),
    /// One run per support budget plus an all_data reference.
    SweepSupport {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        sizes: Vec<usize>,
    },
    /// One run per EWC coefficient.
    SweepEwc {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        coeffs: Vec<f64>,
    },
    /// Every method listed under `methods` on the same schedule and seed.
    Compare(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(c) => commands::run(&c),
        Command::SweepSupport { common, sizes } => commands::sweep_support(&common, &sizes),
        Command::SweepEwc { common, coeffs } => commands::sweep_ewc(&common, &coeffs),
        Command::Compare(c) => commands::compare(&c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) | Failure::Other(m) => f.write_str(m),
        }
    }
}
