use std::path::PathBuf;

use clap::Args;
use nfcnn_core::data::{add_awgn, NoiseSpec};

use crate::cli::UsageError;
use crate::image_io::{load_image, save_image};

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    /// Clamp noisy values to [0, 255] (default).
    #[arg(long, conflicts_with = "no_clip")]
    pub clip: bool,
    /// Keep noisy values outside [0, 255]; the encoder clamps them on save.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(args: &SynthArgs) -> anyhow::Result<()> {
    if !(args.sigma >= 0.0 && args.sigma.is_finite()) {
        return Err(UsageError("--sigma must be non-negative".into()).into());
    }
    let clean = load_image::<f32>(&args.input)?;
    let spec = NoiseSpec {
        sigma: args.sigma,
        clip: !args.no_clip,
        seed: args.seed,
    };
    let pair = add_awgn(&clean, &spec)?;
    let stats = save_image(&pair.noisy, &args.output)?;
    if stats.clamped > 0 {
        eprintln!(
            "warning: {} of {} values fell outside [0, 255] and were clamped when encoding {}",
            stats.clamped,
            pair.noisy.numel(),
            args.output.display()
        );
    }
    Ok(())
}
