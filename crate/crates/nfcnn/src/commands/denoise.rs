use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use crate::checkpoint;
use crate::commands::denoise_image;
use crate::image_io::{load_image, save_image, ImageError};

#[derive(Debug, Clone, Args)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn run(args: &DenoiseArgs) -> anyhow::Result<()> {
    let ck = checkpoint::load::<f32>(&args.ckpt)?;
    let image = load_image::<f32>(&args.input)?;
    let expected = ck.params.config.image_channels;
    if image.shape()[0] != expected {
        return Err(ImageError::ChannelMismatch {
            path: args.input.display().to_string(),
            expected,
            got: image.shape()[0],
        }
        .into());
    }
    let out = denoise_image(&ck.params, &image).context("denoising failed")?;
    let stats = save_image(&out, &args.output)?;
    if stats.clamped > 0 {
        eprintln!("note: {} output values were clamped to [0, 255]", stats.clamped);
    }
    Ok(())
}
