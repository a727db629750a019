use clap::{Parser, Subcommand};
use pretinex::cli::{
    cmd_enhance, cmd_eval, cmd_inspect, cmd_synth, cmd_train, exit_code, EnhanceArgs, EvalArgs,
    SynthArgs, TrainArgs,
};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "pretinex", version)]
#[command(about = "Progressive Retinex low-light image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a low-light patch dataset from well-exposed images
    Synth {
        /// Directory of 8-bit RGB PNG source images
        #[arg(long)]
        images: PathBuf,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Number of patches to synthesize
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CRF name (gamma<value>) or table file; repeatable
        #[arg(long)]
        crf: Vec<String>,
        /// Desk-scale defaults (2,500 patches)
        #[arg(long)]
        desk: bool,
        /// Flat JSON config file (flags win)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the progressive IM/NM cascade on a dataset manifest
    Train {
        /// Path to manifest.jsonl
        #[arg(long)]
        data: PathBuf,
        /// Output model directory
        #[arg(long)]
        out: PathBuf,
        /// Number of progressive stages
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters_per_stage: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Desk-scale defaults (2,000 iterations per stage)
        #[arg(long)]
        desk: bool,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Enhance one low-light image
    Enhance {
        /// Model directory written by `train`
        #[arg(long)]
        model: PathBuf,
        /// Input PNG
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG
        #[arg(long = "out")]
        output: PathBuf,
        /// Cascade depth (defaults to the trained K)
        #[arg(long)]
        k: Option<usize>,
        /// Stop after Retinex division (skip denoising)
        #[arg(long)]
        no_denoise: bool,
        /// Worker threads for window inference
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate enhancement quality over a manifest's test split
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Path to manifest.jsonl
        #[arg(long)]
        data: PathBuf,
        /// Cascade depths to sweep, e.g. 0..5 or 1,2,4
        #[arg(long)]
        k_sweep: Option<String>,
        /// JSON-lines report output path
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the layer table of a model file and verify its checksum
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { images, out, count, seed, crf, desk, config } => {
            cmd_synth(&SynthArgs { images, out, count, seed, crf, desk, config })
        }
        Command::Train { data, out, k, iters_per_stage, seed, desk, config } => {
            cmd_train(&TrainArgs { data, out, k, iters_per_stage, seed, desk, config })
        }
        Command::Enhance { model, input, output, k, no_denoise, threads, config } => {
            cmd_enhance(&EnhanceArgs { model, input, output, k, no_denoise, threads, config })
        }
        Command::Eval { model, data, k_sweep, report, threads, config } => {
            cmd_eval(&EvalArgs { model, data, k_sweep, report, threads, config })
        }
        Command::Inspect { model } => cmd_inspect(&model),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
