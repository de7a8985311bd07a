//! `carmil` command-line driver.

mod commands;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "carmil", version, about = "Context-aware survival MIL on tile bags")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON configuration file; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,

    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (manifest, labels and per-slide CSVs).
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Nested cross-validation; writes the report and every ensemble member.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Score a dataset with every checkpoint of a training run.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory of a `train` run.
        #[arg(long)]
        run: PathBuf,
    },
    /// Per-slide DeltaCon between the spatial graph and the feature graphs.
    Deltacon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Neighbors per tile for every graph.
        #[arg(long, default_value_t = 8)]
        k: usize,
        /// Training run whose encoders produce the embedding graph; without
        /// it the embedding graph is built from raw features.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// C-index with and without shuffled adjacencies on each outer test fold.
    AblateShuffle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Number of shuffle seeds.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Mean neighbor-distance maps of raw features and encoder embeddings.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Model checkpoint (JSON).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Slide to map.
        #[arg(long)]
        slide: String,
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
}

fn dispatch(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::Train { common, manifest } => commands::train(&common, &manifest),
        Command::Evaluate { common, manifest, run } => commands::evaluate(&common, &manifest, &run),
        Command::Deltacon {
            common,
            manifest,
            k,
            run,
        } => commands::deltacon(&common, &manifest, k, run.as_deref()),
        Command::AblateShuffle {
            common,
            manifest,
            run,
            seeds,
        } => commands::ablate_shuffle_cmd(&common, &manifest, &run, seeds),
        Command::Heatmap {
            common,
            manifest,
            checkpoint,
            slide,
            k,
        } => commands::heatmap(&common, &manifest, &checkpoint, &slide, k),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e);
            ExitCode::from(e.exit_code())
        }
    }
}
