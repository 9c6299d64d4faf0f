use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use hdrfuse::checkpoint::Checkpoint;
use hdrfuse::config::RunConfig;
use hdrfuse::eval::{evaluate_manifest, EvalOptions};
use hdrfuse::infer::{infer_directory, OutputFormat};
use hdrfuse::{gendata, plot, train};

#[derive(Parser)]
#[command(name = "hdrfuse", version, about = "HDR video reconstruction from alternating-exposure captures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; checkpoints and the loss log go to `paths.checkpoint_dir`.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `optim.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a checkpoint on every window listed in a manifest.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Score the stage-1 output instead of the final reconstruction.
        #[arg(long)]
        intermediate: bool,
    },
    /// Reconstruct HDR frames from a directory of captured LDR frames.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: OutputFormat,
    },
    /// Render synthetic ground-truth windows and their captures.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot speed/quality and per-frame PSNR from evaluation reports.
    Plot {
        /// Glob matching `report.tsv` files.
        #[arg(long)]
        reports: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = RunConfig::load(&config, seed)?;
            log::info!("config hash {}", hdrfuse::config::hex(&cfg.hash()));
            let data = train::load_training_data(&cfg)?;
            let out = train::train(&cfg, &data, Some(&cfg.checkpoint_dir))?;
            if let Some(last) = out.log.last() {
                log::info!("finished at step {} with total loss {:.5}", last.step, last.total);
            }
            println!("{}", cfg.checkpoint_dir.join("final.ckpt").display());
        }
        Command::Eval {
            ckpt,
            data,
            out,
            intermediate,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let outcome = evaluate_manifest(&ck, &data, &out, EvalOptions { intermediate })?;
            if outcome.rows.is_empty() {
                bail!("no sequence could be evaluated ({} failed)", outcome.failures.len());
            }
            println!("{}", outcome.report.display());
        }
        Command::Infer {
            ckpt,
            frames,
            out,
            format,
        } => {
            let ck = Checkpoint::load(&ckpt)?;
            let outcome = infer_directory(&ck, &frames, &out, format)?;
            log::info!("wrote {} frames to {}", outcome.frames.len(), out.display());
        }
        Command::GenData { config, out } => {
            let cfg = RunConfig::load(&config, None).or_else(|e| match e {
                hdrfuse::config::ConfigError::MissingSeed => RunConfig::load(&config, Some(0)),
                e => Err(e),
            })?;
            let manifest = gendata::generate(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::Plot { reports, out } => {
            let outcome = plot::plot_reports(&reports, &out)?;
            println!("{}\n{}", outcome.scatter.display(), outcome.trace.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()).context("hdrfuse failed") {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
