//! Command-line front end for the stitching pipeline: each subcommand
//! runs one stage (or the whole experiment) from a TOML run config.

mod commands;
mod config;
mod logger;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "vistitch",
    about = "Train, stitch, and evaluate modular visuomotor policies in a deterministic 2-D simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect scripted expert demonstrations in the first environment.
    Collect {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Also write the first collected frame as a PGM image.
        #[arg(long)]
        preview: Option<PathBuf>,
    },
    /// Re-render collected trajectories through the second environment.
    Replay {
        #[arg(long)]
        config: PathBuf,
    },
    /// Select anchor observations from the collected datasets.
    Anchors {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train both source policies (resumable) and assemble the stitched one.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many total epochs; resume later with --resume.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Continue from saved checkpoints and optimizer state.
        #[arg(long)]
        resume: bool,
    },
    /// Run the full experiment: all stages plus zero-shot evaluation.
    StitchEval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the experiment once per value of one axis and aggregate.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Axis to vary: anchor_count, lambda_disent, deviation,
        /// loss_mode, or decoder_choice.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, each a full experiment.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Latent diagnostics: distances, PCA scatters, saliency overlays.
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render results.json as Markdown plus a success-rate chart.
    Report {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> vistitch::Result<()> {
    match cli.command {
        Command::Collect { config, preview } => {
            commands::collect::run(&config, preview.as_deref())
        }
        Command::Replay { config } => commands::replay::run(&config),
        Command::Anchors { config } => commands::anchors::run(&config),
        Command::Train {
            config,
            stop_after,
            resume,
        } => commands::train::run(&config, stop_after, resume),
        Command::StitchEval { config } => commands::stitch_eval::run(&config),
        Command::Sweep {
            config,
            axis,
            values,
        } => commands::sweep::run(&config, &axis, &values),
        Command::Analyze { config } => commands::analyze::run(&config),
        Command::Report { config } => commands::report::run(&config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                message.push_str(&format!("\n  caused by: {s}"));
                source = s.source();
            }
            logger::error(&message);
            ExitCode::FAILURE
        }
    }
}
