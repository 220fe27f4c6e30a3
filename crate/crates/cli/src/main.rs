//! `moldsynth`: generate, enrich, train on and evaluate injection-molding cycle data.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 runtime error, 130 interrupted.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use config::{ModeArg, ModelFlags, SourceArg};

pub const OUTPUT_ROOT_ENV: &str = "MOLDSYNTH_OUTPUT_ROOT";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Runtime(String),
    Interrupted(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
            CliError::Interrupted(_) => 130,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Runtime(m) | CliError::Interrupted(m) => m,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "moldsynth", version, about = "Synthetic injection-molding data and LSTM quality classification")]
pub struct Cli {
    /// Base random seed
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Output directory. Defaults to $MOLDSYNTH_OUTPUT_ROOT/<command>, or ./moldsynth-out/<command>
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// TOML config file; flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print progress to stderr (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate labeled cycles and write them as a dataset
    Generate {
        /// Number of cycles
        #[arg(long)]
        count: Option<usize>,
        /// Fraction of Good cycles
        #[arg(long)]
        good_frac: Option<f64>,
        /// Mark the cycles as real (a stand-in for measured data) or synthetic
        #[arg(long, value_enum)]
        source: Option<SourceArg>,
        /// Multiply every sensor noise level
        #[arg(long)]
        noise_scale: Option<f64>,
    },
    /// Multiply a dataset by phase-offset decimation
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        factor: Option<usize>,
    },
    /// Split a real dataset into train/ and val/
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        val_frac: Option<f64>,
    },
    /// Mix synthetic cycles into a real training set
    Mix {
        /// Real training set
        #[arg(long)]
        real: PathBuf,
        /// Synthetic pool
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Additive: synthetic cycles as a percent of the real total
        #[arg(long)]
        percent: Option<f64>,
        /// Substitutive: number of synthetic cycles
        #[arg(long)]
        count: Option<usize>,
        /// Additive base. Defaults to the pre-split size recorded by `split`, else the real set size
        #[arg(long)]
        real_total: Option<usize>,
        /// Substitutive training-set size. Defaults to the real set size
        #[arg(long)]
        fixed_size: Option<usize>,
    },
    /// Train a model
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a dataset with a trained model
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a mixing sweep and write the report
    Sweep {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Comma-separated levels (percents or synthetic counts)
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        #[arg(long)]
        runs_per_level: Option<usize>,
        /// Cells trained concurrently
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        val_frac: Option<f64>,
        /// Real dataset directory; simulated when absent
        #[arg(long)]
        real: Option<PathBuf>,
        /// Synthetic pool directory; simulated when absent
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        real_total: Option<usize>,
        #[arg(long)]
        fixed_size: Option<usize>,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Re-render report files from a sweep's report.json
    Report {
        /// Sweep output directory
        #[arg(long)]
        input: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate { .. } => "generate",
            Command::Augment { .. } => "augment",
            Command::Split { .. } => "split",
            Command::Mix { .. } => "mix",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Report { .. } => "report",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        // A second Ctrl-C falls through to the default handler via exit.
        let _ = ctrlc::set_handler(move || {
            if cancel.swap(true, Ordering::SeqCst) {
                std::process::exit(130);
            }
            eprintln!("interrupt received, stopping after the current batch");
        });
    }
    match commands::run(cli, &cancel) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
