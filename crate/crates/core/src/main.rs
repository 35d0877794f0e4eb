use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use maskvoice::pipeline::{run, PipelineConfig};

#[derive(Parser)]
#[command(name = "maskvoice", version, about = "Noise-robust voice cloning with denoise-mask conditioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config with sections dsp, enhancer, tts and pipeline. Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-speaker corpus.
    Datagen(Common),
    /// Ingest WAV pairs and add noise where only clean audio is given.
    Augment(Common),
    /// Train the mask estimator.
    TrainEnhancer(Common),
    /// SI-SDR table per input SNR.
    EvalEnhancer(Common),
    /// Multi-speaker pretraining of the synthesizer.
    Pretrain(Common),
    /// Fine-tune on the new speaker's noisy recordings.
    Adapt(Common),
    /// Synthesize the held-out texts for every speaker.
    Synth(Common),
    /// Speaker similarity of synthesized against training speech.
    EvalSimilarity(Common),
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (common, stage): (&Common, fn(&PipelineConfig, u64, &std::path::Path) -> maskvoice::Result<String>) =
        match &cli.command {
            Command::Datagen(c) => (c, run::datagen),
            Command::Augment(c) => (c, run::augment),
            Command::TrainEnhancer(c) => (c, run::train_enhancer),
            Command::EvalEnhancer(c) => (c, run::eval_enhancer),
            Command::Pretrain(c) => (c, run::pretrain),
            Command::Adapt(c) => (c, run::adapt),
            Command::Synth(c) => (c, run::synth),
            Command::EvalSimilarity(c) => (c, run::eval_similarity_cmd),
        };
    let cfg = match &common.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    std::fs::create_dir_all(&common.out_dir)
        .with_context(|| format!("creating {}", common.out_dir.display()))?;
    let msg = stage(&cfg, common.seed, &common.out_dir)?;
    println!("{msg}");
    Ok(())
}
