use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use nfcnn_core::data::AugmentConfig;
use nfcnn_core::model::{ModelConfig, Parameters};
use nfcnn_core::train::{TrainConfig, Trainer};

use crate::cli::UsageError;
use crate::commands::denoise_image;
use crate::commands::eval::evaluate;
use crate::commands::train::DATA_SEED_SALT;
use crate::dataset::{BatchStream, Dataset, StreamConfig};
use crate::report::{render_ablation, AblationRow};

/// Trains every (fusion on/off, stage count, noise level) combination at
/// toy scale and tabulates the mean PSNR of each on an evaluation set.
#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    /// Training images (directory or manifest).
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation images; defaults to the training images.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4])]
    pub stages: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [15.0, 25.0, 50.0, 75.0])]
    pub sigmas: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    pub steps: u64,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 32)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table to this file.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(args: &AblateArgs) -> anyhow::Result<()> {
    let ok = !args.stages.is_empty()
        && args.stages.iter().all(|&t| t >= 1)
        && !args.sigmas.is_empty()
        && args.sigmas.iter().all(|s| *s >= 0.0 && s.is_finite())
        && args.width >= 1
        && args.batch >= 1
        && args.patch >= 1
        && args.lr > 0.0;
    if !ok {
        return Err(UsageError("invalid ablation settings".into()).into());
    }
    let train_set = Dataset::open(&args.data, 1)?;
    let eval_set = match &args.eval_data {
        Some(p) => Dataset::open(p, 1)?,
        None => train_set.clone(),
    };

    let mut rows = Vec::new();
    for &sigma in &args.sigmas {
        let stream = BatchStream::new(
            &train_set,
            StreamConfig {
                batch_size: args.batch,
                patch: args.patch,
                sigma,
                clip: true,
                augment: AugmentConfig::default(),
            },
            args.seed ^ DATA_SEED_SALT,
        )?;
        for &stages in &args.stages {
            for fusion in [false, true] {
                let config = ModelConfig {
                    stages,
                    fusion_enabled: fusion,
                    ..ModelConfig::reduced(args.width)
                };
                let train_config = TrainConfig {
                    base_lr: args.lr,
                    batch_size: args.batch,
                    patch: args.patch,
                    total_steps: args.steps,
                    seed: args.seed,
                    ..TrainConfig::default()
                };
                let mut trainer = Trainer::new(Parameters::from_seed(config, args.seed)?, train_config)?;
                for k in 0..args.steps {
                    trainer
                        .train_step(&stream.batch(k)?)
                        .with_context(|| format!("T={stages} sigma={sigma} fusion={fusion}"))?;
                }
                let report = evaluate(&eval_set, sigma, true, args.seed, |noisy| {
                    Ok(denoise_image(&trainer.params, noisy)?)
                })?;
                let row = AblationRow {
                    fusion,
                    stages,
                    sigma,
                    psnr: report.real.mean_psnr().unwrap_or(f64::NAN),
                };
                eprintln!("{}\tT={}\tsigma={}\t{:.4} dB", row.model_name(), stages, sigma, row.psnr);
                rows.push(row);
            }
        }
    }
    let note = format!(
        "toy-scale ablation: width {}, {} steps, batch {}, patch {}, seed {}; mean PSNR (dB) on {} images",
        args.width,
        args.steps,
        args.batch,
        args.patch,
        args.seed,
        eval_set.len()
    );
    let text = render_ablation(&rows, &args.sigmas, &args.stages, &note);
    print!("{text}");
    if let Some(path) = &args.report {
        fs::write(path, &text).with_context(|| format!("cannot write report {}", path.display()))?;
    }
    Ok(())
}
