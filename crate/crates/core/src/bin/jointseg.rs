use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointseg::config::load_config;
use jointseg::harness::{self, RunOptions};
use jointseg::Result;

#[derive(Parser)]
#[command(name = "jointseg", version, about = "Joint denoising, bias correction and segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic image described by the config.
    Synth(Common),
    /// Add the configured noise to the input image.
    Noise(Common),
    /// Joint segmentation, bias estimation and denoising.
    Segment(Common),
    /// Denoise only (no bias, no fitting term).
    Denoise(Common),
    /// Score a predicted mask or label map against the truth.
    Metrics {
        pred: PathBuf,
        truth: PathBuf,
        /// Also write metrics.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

type Runner = fn(jointseg::config::ExperimentConfig, &RunOptions) -> Result<Vec<PathBuf>>;

fn run(cli: Cli) -> Result<()> {
    let (common, runner): (Common, Runner) = match cli.command {
        Command::Synth(c) => (c, harness::cmd_synth),
        Command::Noise(c) => (c, harness::cmd_noise),
        Command::Segment(c) => (c, harness::cmd_segment),
        Command::Denoise(c) => (c, harness::cmd_denoise),
        Command::Metrics { pred, truth, out, quiet } => {
            let opts = RunOptions { seed: None, out, quiet };
            print!("{}", harness::cmd_metrics(&pred, &truth, &opts)?);
            return Ok(());
        }
    };
    let cfg = load_config(&common.config)?;
    let opts = RunOptions {
        seed: common.seed,
        out: common.out,
        quiet: common.quiet,
    };
    let written = runner(cfg, &opts)?;
    if !opts.quiet {
        for p in written {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("jointseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
