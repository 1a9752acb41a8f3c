use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod gradcheck;

#[derive(Parser)]
#[command(
    name = "orthoseg",
    version,
    about = "Multimodal orthoimage segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut scenes into overlapping tiles, split them and write a manifest.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration supplying data defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long = "val-frac")]
        val_frac: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train from a tile directory, writing checkpoints and metrics.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Tile directory; overrides `data.tiles_dir`.
        #[arg(long)]
        tiles: Option<PathBuf>,
        /// Resume even if the checkpoint was written under another configuration.
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Predict a full scene with the overlap-tile scheme.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Scene as `.mcr` or one file of a PNM set.
        #[arg(long)]
        image: PathBuf,
        /// Output prefix for `.probs.mcr`, `.labels.mcr` and `.color.ppm`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two label maps and write the metrics report.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        classes: usize,
    },
    /// Finite-difference check of every primitive plus the gating assertions.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write seeded synthetic scenes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare {
            input,
            out,
            config,
            tile,
            overlap,
            val_frac,
            seed,
        } => commands::prepare(
            &input,
            &out,
            config.as_deref(),
            tile,
            overlap,
            val_frac,
            seed,
        ),
        Command::Train {
            config,
            out,
            resume,
            tiles,
            allow_config_mismatch,
        } => commands::train(
            &config,
            &out,
            resume.as_deref(),
            tiles.as_deref(),
            allow_config_mismatch,
        ),
        Command::Infer { ckpt, image, out } => commands::infer(&ckpt, &image, &out),
        Command::Eval {
            pred,
            truth,
            out,
            classes,
        } => commands::eval(&pred, &truth, &out, classes),
        Command::Gradcheck { seed } => gradcheck::run(seed),
        Command::Synth {
            out,
            count,
            size,
            seed,
        } => commands::synth(&out, count, size, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let detail = e.to_string().replace('\n', " ");
            eprintln!("{} {detail}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
