use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use nfcnn_core::data::{add_awgn, NoiseSpec, PIXEL_MAX};
use nfcnn_core::{metrics, Tensor};

use crate::checkpoint;
use crate::cli::UsageError;
use crate::commands::denoise_image;
use crate::dataset::Dataset;
use crate::image_io::quantized;
use crate::report::EvalReport;

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Directory of clean images, or a manifest file.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    /// Image `i` is corrupted with seed `seed ^ i`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Do not clamp the synthesized noisy images to [0, 255].
    #[arg(long)]
    pub no_clip: bool,
    /// Per-image rows use the 8-bit quantized output instead of the
    /// real-valued one. Both means are always reported.
    #[arg(long)]
    pub quantized: bool,
    /// Also write the report to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Noisy copy of image `index`, seeded by `seed ^ index`.
pub fn noisy_copy(clean: &Tensor<f32>, sigma: f64, clip: bool, seed: u64, index: usize) -> nfcnn_core::Result<Tensor<f32>> {
    let spec = NoiseSpec {
        sigma,
        clip,
        seed: seed ^ index as u64,
    };
    Ok(add_awgn(clean, &spec)?.noisy)
}

/// Runs `denoise` over every image of `dataset` and measures the result
/// against the clean image in pixel units.
pub fn evaluate<F>(dataset: &Dataset, sigma: f64, clip: bool, seed: u64, mut denoise: F) -> anyhow::Result<EvalReport>
where
    F: FnMut(&Tensor<f32>) -> anyhow::Result<Tensor<f32>>,
{
    let mut report = EvalReport::default();
    for (index, (path, clean)) in dataset.images.iter().enumerate() {
        let name = path.display().to_string();
        let noisy = noisy_copy(clean, sigma, clip, seed, index)?;
        let out = denoise(&noisy).with_context(|| format!("denoising {name}"))?;
        report.real.push(&name, metrics::mse(&out, clean)?, PIXEL_MAX);
        report.quantized.push(&name, metrics::mse(&quantized(&out), clean)?, PIXEL_MAX);
        report.noisy.push(&name, metrics::mse(&noisy, clean)?, PIXEL_MAX);
    }
    Ok(report)
}

pub fn run(args: &EvalArgs) -> anyhow::Result<()> {
    if !(args.sigma >= 0.0 && args.sigma.is_finite()) {
        return Err(UsageError("--sigma must be non-negative".into()).into());
    }
    let ck = checkpoint::load::<f32>(&args.ckpt)?;
    let dataset = Dataset::open(&args.dataset, ck.params.config.image_channels)?;
    let report = evaluate(&dataset, args.sigma, !args.no_clip, args.seed, |noisy| {
        Ok(denoise_image(&ck.params, noisy)?)
    })?;
    let text = report.render(args.quantized);
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).with_context(|| format!("cannot write report {}", path.display()))?;
    }
    Ok(())
}
