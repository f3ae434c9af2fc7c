use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use nfcnn_core::data::{AugmentConfig, NoiseSpec};
use nfcnn_core::model::{ModelConfig, Parameters};
use nfcnn_core::train::{TrainConfig, Trainer};

use crate::checkpoint;
use crate::cli::UsageError;
use crate::dataset::{BatchStream, Dataset, StreamConfig};
use crate::report::{train_log_line, TRAIN_LOG_HEADER};

/// Separates the data stream from the initialization stream of one seed.
pub const DATA_SEED_SALT: u64 = 0x0064_6174_6173_6574;

#[derive(Debug, Clone, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    /// Directory of clean training images, or a manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint written periodically and at the end.
    #[arg(long, default_value = "nfcnn.ckpt")]
    pub out: PathBuf,
    /// Training log; defaults to the checkpoint path with a `.log` extension.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// AWGN standard deviation in pixel units.
    #[arg(long, default_value_t = 25.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub stages: usize,
    #[arg(long, default_value_t = 180)]
    pub patch: usize,
    #[arg(long, default_value_t = 6)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Step from which the learning rate is divided by 10.
    #[arg(long, default_value_t = 300_000)]
    pub lr_drop_step: u64,
    #[arg(long, default_value_t = 400_000)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Remove the fusion blocks; each stage then consumes the previous clean
    /// estimate.
    #[arg(long)]
    pub no_fusion: bool,
    /// Single-channel model (default).
    #[arg(long, conflicts_with = "color")]
    pub gray: bool,
    /// Three-channel model.
    #[arg(long)]
    pub color: bool,
    /// Weight of the L1 term in every loss.
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    /// Weight of the noise-branch loss.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Leave noisy pixels outside [0, 255] instead of clamping them.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, default_value_t = 0.2)]
    pub blur_prob: f64,
    /// Disable random flips.
    #[arg(long)]
    pub no_flip: bool,
    /// Use this width for every hidden layer instead of the full schedule.
    #[arg(long)]
    pub width: Option<usize>,
    /// Probability of both dropout modes.
    #[arg(long, default_value_t = 0.05)]
    pub dropout: f64,
    /// Save a checkpoint every N steps (0: only at the end).
    #[arg(long, default_value_t = 1000)]
    pub checkpoint_every: u64,
    /// Continue from a checkpoint that carries optimizer state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

impl TrainArgs {
    pub fn model_config(&self) -> ModelConfig {
        let base = match self.width {
            Some(w) => ModelConfig::reduced(w),
            None => ModelConfig::default(),
        };
        ModelConfig {
            stages: self.stages,
            image_channels: if self.color { 3 } else { 1 },
            dropout_elem_p: self.dropout,
            dropout_chan_p: self.dropout,
            fusion_enabled: !self.no_fusion,
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            base_lr: self.lr,
            lr_drop_step: self.lr_drop_step,
            batch_size: self.batch,
            patch: self.patch,
            total_steps: self.steps,
            seed: self.seed,
            noise: NoiseSpec {
                sigma: self.sigma,
                clip: !self.no_clip,
                seed: self.seed,
            },
            augment: AugmentConfig {
                flip: !self.no_flip,
                blur_prob: self.blur_prob,
                ..AugmentConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    fn validate(&self) -> Result<(), UsageError> {
        let checks = [
            (self.sigma >= 0.0 && self.sigma.is_finite(), "--sigma must be non-negative"),
            (self.stages >= 1, "--stages must be at least 1"),
            (self.patch >= 1, "--patch must be positive"),
            (self.batch >= 1, "--batch must be at least 1"),
            (self.lr > 0.0, "--lr must be positive"),
            (self.alpha >= 0.0, "--alpha must be non-negative"),
            (self.beta >= 0.0, "--beta must be non-negative"),
            ((0.0..=1.0).contains(&self.blur_prob), "--blur-prob must be in [0, 1]"),
            ((0.0..1.0).contains(&self.dropout), "--dropout must be in [0, 1)"),
            (self.width != Some(0), "--width must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(UsageError((*msg).to_string())),
            None => Ok(()),
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.log.clone().unwrap_or_else(|| self.out.with_extension("log"))
    }
}

pub fn run(args: &TrainArgs) -> anyhow::Result<()> {
    args.validate()?;
    let model_config = args.model_config();
    let train_config = args.train_config();
    let dataset = Dataset::open(&args.data, model_config.image_channels)?;
    let stream = BatchStream::new(
        &dataset,
        StreamConfig {
            batch_size: args.batch,
            patch: args.patch,
            sigma: args.sigma,
            clip: !args.no_clip,
            augment: train_config.augment,
        },
        args.seed ^ DATA_SEED_SALT,
    )?;

    let mut trainer = match &args.resume {
        None => Trainer::new(Parameters::from_seed(model_config, args.seed)?, train_config)?,
        Some(path) => {
            let ck = checkpoint::load::<f32>(path)?;
            let Some(adam) = ck.optimizer else {
                bail!("{} has no optimizer state to resume from", path.display());
            };
            if ck.params.config != model_config {
                return Err(UsageError(format!(
                    "model flags do not match the configuration stored in {}",
                    path.display()
                ))
                .into());
            }
            let mut trainer = Trainer::new(ck.params, train_config)?;
            trainer.adam = adam;
            trainer
        }
    };

    let log_path = args.log_path();
    let mut log = open_log(&log_path, args.resume.is_some())?;
    eprintln!(
        "training {} parameters on {} of {} images for {} steps",
        trainer.params.parameter_count(),
        stream.eligible(),
        dataset.len(),
        args.steps
    );

    while trainer.step() < args.steps {
        let step = trainer.step();
        let batch = stream.batch(step)?;
        let report = trainer
            .train_step(&batch)
            .with_context(|| format!("training stopped at step {step}"))?;
        writeln!(log, "{}", train_log_line(&report)).context("writing training log")?;
        let done = trainer.step();
        if args.checkpoint_every > 0 && done % args.checkpoint_every == 0 && done < args.steps {
            log.flush().context("writing training log")?;
            save_atomic(&args.out, &trainer)?;
        }
    }
    log.flush().context("writing training log")?;
    save_atomic(&args.out, &trainer)?;
    eprintln!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn open_log(path: &Path, append: bool) -> anyhow::Result<BufWriter<File>> {
    let file = if append {
        OpenOptions::new().append(true).create(true).open(path)
    } else {
        File::create(path)
    }
    .with_context(|| format!("cannot open training log {}", path.display()))?;
    let fresh = file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
    }
    Ok(w)
}

/// Writes next to the target and renames, so an interrupted save never
/// leaves a truncated checkpoint behind.
fn save_atomic(path: &Path, trainer: &Trainer<f32>) -> anyhow::Result<()> {
    let tmp = path.with_extension("ckpt.tmp");
    checkpoint::save(&tmp, &trainer.params, Some(&trainer.adam))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move checkpoint into {}", path.display()))?;
    Ok(())
}
