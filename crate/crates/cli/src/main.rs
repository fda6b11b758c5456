//! `nameprobe`: demographic enrichment runs driven by a TOML config.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Bad configuration or missing input; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "nameprobe", version, about = "Zero-shot demographic enrichment of name lists")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Response cache journal (overrides the config).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Recorded response journal to replay instead of calling models. Repeatable.
    #[arg(long, global = true)]
    pub replay: Vec<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Prompt every model for every record and parse the answers.
    Enrich,
    /// Drop records that the validity judges do not accept as real names.
    Clean {
        /// Keep threshold for the weighted validity score.
        #[arg(long)]
        threshold: Option<f64>,
        /// Comma-separated judge weights, in judge order.
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
    },
    /// Majority vote across models for classification fields.
    Ensemble,
    /// Accuracy and birth-year error against ground truth, with baselines.
    Evaluate {
        /// Records to score against (default: kept.csv if present, else records.csv).
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Model-by-model agreement matrices and clustering.
    Agreement,
    /// Birth-year and age distribution diagnostics.
    Bias {
        /// Records providing the ground-truth overlay.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Collect the text reports of earlier steps into report.txt.
    Report,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
