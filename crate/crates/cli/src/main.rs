//! `spikediff` command-line front end.
//!
//! Every subcommand reads its configuration (TOML, or a previously written
//! run manifest), consumes artifacts under `--out`, writes new artifacts
//! there without ever overwriting, and records a manifest with SHA-256
//! digests of everything it read and wrote.

mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "spikediff", version, about = "Reconstruct visual stimuli from spike responses in two stages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration, or a run manifest (.json) to re-run.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration value, e.g. `diffusion.strength=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed; overrides the configured one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output root holding data/, images/, metrics/, models/ and manifests/.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Re-hash every consumed artifact against the manifest that produced it.
    #[arg(long)]
    pub verify: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a stimulus movie and spike recordings.
    GenData(Common),
    /// Per-region peristimulus time histograms.
    Psth(Common),
    /// Train the hierarchical VAE on training frames.
    TrainHvae(Common),
    /// Fit the ridge map from responses to hierarchical latents.
    FitStage1(Common),
    /// Fit the ridge maps from responses to semantic features.
    FitStage2(Common),
    /// Train the semantic model, latent autoencoder and denoiser.
    TrainDiffusion(Common),
    /// Reconstruct held-out frames through both stages.
    Reconstruct(Common),
    /// Repeat decoding for each configured region subset.
    Ablate(Common),
    /// Compare the hierarchical VAE against a parameter-matched flat VAE.
    CompareVae(Common),
    /// Score reconstructed images against the stimuli.
    Eval(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, common) = match &cli.command {
        Command::GenData(c) => ("gen-data", c),
        Command::Psth(c) => ("psth", c),
        Command::TrainHvae(c) => ("train-hvae", c),
        Command::FitStage1(c) => ("fit-stage1", c),
        Command::FitStage2(c) => ("fit-stage2", c),
        Command::TrainDiffusion(c) => ("train-diffusion", c),
        Command::Reconstruct(c) => ("reconstruct", c),
        Command::Ablate(c) => ("ablate", c),
        Command::CompareVae(c) => ("compare-vae", c),
        Command::Eval(c) => ("eval", c),
    };
    match run::execute(name, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
