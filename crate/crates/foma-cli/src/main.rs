//! `foma` — seeded experiment runner for first-order manifold augmentation.
//!
//! Subcommands: `train` (one run), `compare` (configs x seeds aggregation),
//! `sweep-lambda` (transform-strength diagnostic for a checkpoint),
//! `estimate-id` (TwoNN intrinsic dimension).
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or missing-data
//! error, 4 numeric failure (divergence, degenerate estimates).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use foma::Error;

#[derive(Parser)]
#[command(
    name = "foma",
    about = "Regression training with first-order manifold augmentation",
    long_about = "Runs seeded regression experiments with batch-level SVD \
                  augmentation (FOMA), plus mixup / additive-noise / ERM \
                  baselines.\n\nExit codes: 0 success, 2 configuration error, \
                  3 I/O error, 4 numeric failure."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one training job from a config file and write run artifacts.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config's out_dir, or $FOMA_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs across seeds and aggregate mean +/- std tables.
    Compare {
        /// Experiment configs (TOML), one per run column.
        #[arg(long, required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Comma-separated seed list, e.g. "0,1,2".
        #[arg(long, default_value = "0,1,2", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the transform strength lambda for a saved checkpoint and emit
    /// the (lambda, MSE) curve plus label histograms.
    SweepLambda {
        /// Model checkpoint (checkpoint.json from a train run).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Config describing the dataset the model was trained on.
        #[arg(long)]
        config: PathBuf,
        /// Number of grid points over [0, 1].
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Which split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate intrinsic dimension with TwoNN and print one JSON line.
    EstimateId {
        /// CSV file (features then labels); estimated on the joint rows.
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Feature column count for --data.
        #[arg(long, default_value_t = 1)]
        features: usize,
        /// Label column count for --data.
        #[arg(long, default_value_t = 1)]
        labels: usize,
        /// Treat the first CSV row as a header.
        #[arg(long, default_value_t = true)]
        header: bool,
        /// Synthetic manifold "d,D,n": intrinsic dim, ambient dim, points.
        #[arg(long)]
        synthetic: Option<String>,
        /// Fraction of the largest distance ratios to discard, in [0, 0.5).
        #[arg(long, default_value_t = 0.0)]
        discard: f64,
        /// Seed for the synthetic generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => commands::cmd_train(&config, seed, out),
        Command::Compare {
            configs,
            seeds,
            out,
        } => commands::cmd_compare(&configs, &seeds, out),
        Command::SweepLambda {
            checkpoint,
            config,
            grid,
            split,
            out,
        } => commands::cmd_sweep_lambda(&checkpoint, &config, grid, &split, out),
        Command::EstimateId {
            data,
            features,
            labels,
            header,
            synthetic,
            discard,
            seed,
        } => commands::cmd_estimate_id(
            data.as_deref(),
            features,
            labels,
            header,
            synthetic.as_deref(),
            discard,
            seed,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io(_) | Error::Input(_) => 3,
        Error::Numeric(_) => 4,
    }
}
