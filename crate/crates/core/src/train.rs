//! Training configuration, learning-rate schedule and the optimizer step.

use crate::data::{AugmentConfig, NoiseSpec};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::model::{model_forward, Parameters};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::session::Session;
use crate::tensor::Tensor;
use crate::Phase;

/// Loss magnitude treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const DROPOUT_STREAM_SALT: u64 = 0x0064_726f_706f_7574;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the noise-branch loss.
    pub alpha: f64,
    /// Weight of the L1 term inside each loss.
    pub beta: f64,
    pub base_lr: f64,
    pub lr_drop_step: u64,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub patch: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 0.01,
            base_lr: 1e-3,
            lr_drop_step: 300_000,
            lr_drop_factor: 10.0,
            batch_size: 6,
            patch: 180,
            total_steps: 400_000,
            seed: 0,
            noise: NoiseSpec::default(),
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.base_lr > 0.0
            && self.lr_drop_factor > 0.0
            && self.batch_size >= 1
            && self.patch >= 1
            && self.noise.sigma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument("invalid training configuration".into()))
        }
    }

    /// `base_lr` before `lr_drop_step`, `base_lr / lr_drop_factor` from it on.
    pub fn lr_at_step(&self, step: u64) -> f64 {
        if step < self.lr_drop_step {
            self.base_lr
        } else {
            self.base_lr / self.lr_drop_factor
        }
    }
}

/// One minibatch in network units, NCHW.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub noisy: Tensor<T>,
    pub clean: Tensor<T>,
    pub noise: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    /// Builds a batch, deriving the noise target as `noisy - clean`.
    pub fn new(noisy: Tensor<T>, clean: Tensor<T>) -> Result<Self> {
        let noise = noisy.zip_map(&clean, "batch", |y, x| y - x)?;
        Ok(Batch { noisy, clean, noise })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub lr: f64,
    pub total: f64,
    pub clean: f64,
    pub noise: f64,
}

/// Model parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub params: Parameters<T>,
    pub adam: AdamState<T>,
    pub config: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(params: Parameters<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(params.learnables(), config.adam);
        Ok(Trainer { params, adam, config })
    }

    /// Step index of the next update.
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    /// Loss of the current parameters on `batch` without updating anything.
    pub fn evaluate_loss(&self, batch: &Batch<T>, phase: Phase) -> Result<StepReport> {
        let step = self.step();
        let mut session = self.params.session(phase, self.dropout_rng(step));
        let report = self.forward_loss(&mut session, batch, step)?;
        Ok(report.0)
    }

    fn dropout_rng(&self, step: u64) -> crate::Rng {
        crate::rng_for(self.config.seed ^ DROPOUT_STREAM_SALT, step)
    }

    fn forward_loss(&self, session: &mut Session<T>, batch: &Batch<T>, step: u64) -> Result<(StepReport, crate::Var)> {
        let y = session.input(batch.noisy.clone());
        let x = session.input(batch.clean.clone());
        let n = session.input(batch.noise.clone());
        let vars = model_forward(session, &self.params, y).map_err(|e| diverged(e, step))?;
        let loss = total_loss(&mut session.tape, &vars.stages, x, n, self.config.alpha, self.config.beta)?;
        let total = session.tape.value(loss.total).data()[0].as_f64();
        if !total.is_finite() || total.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Diverged { step, loss: total });
        }
        Ok((
            StepReport {
                step,
                lr: self.config.lr_at_step(step),
                total,
                clean: loss.clean.as_f64(),
                noise: loss.noise.as_f64(),
            },
            loss.total,
        ))
    }

    /// Forward in train phase, stage-wise loss, backward, Adam update.
    /// Returns the loss measured before the update.
    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<StepReport> {
        let step = self.step();
        let mut session = self.params.session(Phase::Train, self.dropout_rng(step));
        let (report, loss) = self.forward_loss(&mut session, batch, step)?;
        session.backward(loss)?;
        let grads = session.gradients()?;
        self.params.apply_batch_stats(session.batch_stats());
        let mut learnables = self.params.learnables_mut();
        self.adam.step(&mut learnables, &grads, report.lr)?;
        Ok(report)
    }
}

fn diverged(err: Error, step: u64) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { step, loss: f64::NAN },
        other => other,
    }
}
