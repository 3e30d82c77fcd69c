//! `panvae`: train, evaluate, prune and inspect prototype classifiers.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 training divergence, 5 checkpoint error, 6 degenerate hull or projection.

mod commands;
mod export;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panvae::data::Split;
use panvae::losses::Variant;
use panvae::metrics::ProjectionMethod;

use commands::{ReportArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(
    name = "panvae",
    version,
    about = "Prototype classifiers with a volumetric diversity loss"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write a checkpoint plus run logs.
    Train {
        /// TOML run configuration; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Weight on the diversity term.
        #[arg(long)]
        div_scale: Option<f64>,
        /// Training data: IDX directory or file, or array archive directory.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Held-out data evaluated after every epoch.
        #[arg(long)]
        test_data: Option<PathBuf>,
        /// Use only the first N training images.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write a metrics report (.json or .csv).
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
    },
    /// Deactivate prototypes that are never the most similar one for a training image of their class.
    Prune {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pruned checkpoint; must differ from --ckpt.
        #[arg(long)]
        out: PathBuf,
        /// Prune report CSV (default: --out with a .csv extension).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Coverage of one class by its prototypes' nearest observations.
    Report {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long)]
        class: usize,
        #[arg(long, default_value_t = 100)]
        n_nearest: usize,
        #[arg(long, default_value = "pca")]
        proj: ProjectionMethod,
        /// `x,y` coordinates, one row per observation (whole dataset or the class).
        #[arg(long)]
        proj_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode prototypes to PNG images.
    ExportPrototypes {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also render pruned prototypes, marked with a red cross.
        #[arg(long)]
        include_pruned: bool,
    },
}

fn run(cli: Cli) -> failure::CliResult {
    match cli.command {
        Command::Train {
            config,
            variant,
            div_scale,
            data,
            test_data,
            limit,
            epochs,
            seed,
            out,
        } => commands::cmd_train(&TrainArgs {
            config,
            variant,
            div_scale,
            data,
            test_data,
            limit,
            epochs,
            seed,
            out,
        }),
        Command::Eval {
            ckpt,
            data,
            split,
            report,
        } => commands::cmd_eval(&ckpt, &data, split, &report),
        Command::Prune {
            ckpt,
            data,
            out,
            report,
        } => commands::cmd_prune(&ckpt, &data, &out, report.as_deref()),
        Command::Report {
            ckpt,
            data,
            split,
            class,
            n_nearest,
            proj,
            proj_file,
            out,
        } => commands::cmd_report(&ReportArgs {
            ckpt,
            data,
            split,
            class,
            n_nearest,
            proj,
            proj_file,
            out,
        }),
        Command::ExportPrototypes {
            ckpt,
            out,
            include_pruned,
        } => commands::cmd_export(&ckpt, &out, include_pruned),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
