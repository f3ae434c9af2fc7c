//! Per-channel batch normalization over (N, H, W).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;
use crate::Phase;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    /// Weight of the newest batch in the running-statistics average.
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running mean and (unbiased) variance used at eval time.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub initialized: bool,
}

impl<T: Scalar> RunningStats<T> {
    /// Statistics that have never seen data; eval mode rejects them.
    /// The first training batch is copied in verbatim.
    pub fn uninitialized(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
            initialized: false,
        }
    }

    /// Mean 0, variance 1: eval mode starts as an identity normalization.
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            initialized: true,
            ..Self::uninitialized(channels)
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.numel()
    }

    pub fn update(&mut self, batch: &BatchStats<T>, momentum: f64) {
        if !self.initialized {
            self.mean.data_mut().copy_from_slice(&batch.mean);
            self.var.data_mut().copy_from_slice(&batch.var);
            self.initialized = true;
            return;
        }
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(&batch.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(&batch.var) {
            *r = keep * *r + m * b;
        }
    }
}

/// Statistics of one training batch: mean and unbiased variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub struct BatchNormOutput<T> {
    pub output: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch: Option<BatchStats<T>>,
}

pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub fn batch_norm2d_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &RunningStats<T>,
    phase: Phase,
    cfg: BatchNormConfig,
) -> Result<BatchNormOutput<T>> {
    let (n, c, h, w) = input.dims4("batch_norm2d")?;
    for (t, name) in [(gamma, "gamma"), (beta, "beta")] {
        if t.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: t.shape().to_vec(),
                rhs: vec![c],
            });
        }
    }
    if stats.channels() != c {
        return Err(Error::ChannelMismatch {
            op: "batch_norm2d running stats",
            expected: stats.channels(),
            got: c,
        });
    }
    let hw = h * w;
    let m = n * hw;
    let x = input.data();
    let plane = |s: usize, ch: usize| &x[(s * c + ch) * hw..(s * c + ch + 1) * hw];

    let (mean, var_biased, batch) = match phase {
        Phase::Train => {
            if m < 2 {
                return Err(Error::InvalidShape {
                    op: "batch_norm2d",
                    msg: format!("train mode needs at least 2 values per channel, got {m}"),
                });
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let sum: f64 = (0..n).flat_map(|s| plane(s, ch)).map(|v| v.as_f64()).sum();
                let mu = sum / m as f64;
                let ss: f64 = (0..n)
                    .flat_map(|s| plane(s, ch))
                    .map(|v| {
                        let d = v.as_f64() - mu;
                        d * d
                    })
                    .sum();
                mean[ch] = mu;
                var[ch] = ss / m as f64;
            }
            let batch = BatchStats {
                mean: mean.iter().map(|&v| T::from_f64_lossy(v)).collect(),
                var: var
                    .iter()
                    .map(|&v| T::from_f64_lossy(v * m as f64 / (m - 1) as f64))
                    .collect(),
            };
            (mean, var, Some(batch))
        }
        Phase::Eval => {
            if !stats.initialized {
                return Err(Error::UninitializedStatistics);
            }
            let mean = stats.mean.data().iter().map(|v| v.as_f64()).collect();
            let var = stats.var.data().iter().map(|v| v.as_f64()).collect();
            (mean, var, None)
        }
    };

    let inv_std: Vec<T> = var_biased
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + cfg.eps).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&v| T::from_f64_lossy(v)).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * hw;
            let (mu, is, g, b) = (mean_t[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in base..base + hw {
                let xh = (x[i] - mu) * is;
                xhat[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    Ok(BatchNormOutput {
        output: Tensor::from_vec(input.shape(), out)?,
        xhat,
        inv_std,
        batch,
    })
}

pub fn batch_norm2d_backward<T: Scalar>(
    shape: &[usize],
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    grad: &Tensor<T>,
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let m = T::from_usize(n * hw).expect("count fits");
    let g = grad.data();
    let mut dx = vec![T::zero(); g.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let idx = || (0..n).flat_map(move |s| (s * c + ch) * hw..(s * c + ch + 1) * hw);
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for i in idx() {
            sum_g += g[i];
            sum_gx += g[i] * xhat[i];
        }
        dgamma[ch] = sum_gx;
        dbeta[ch] = sum_g;
        let scale = gamma.data()[ch] * inv_std[ch];
        if batch_stats {
            let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
            for i in idx() {
                dx[i] = scale * (g[i] - mean_g - xhat[i] * mean_gx);
            }
        } else {
            for i in idx() {
                dx[i] = scale * g[i];
            }
        }
    }
    BatchNormGrads {
        input: Tensor::from_vec(shape, dx).expect("input shape"),
        gamma: Tensor::from_vec(&[c], dgamma).expect("gamma shape"),
        beta: Tensor::from_vec(&[c], dbeta).expect("beta shape"),
    }
}

impl<T: Scalar> Tape<T> {
    /// Records batch normalization and returns the batch statistics (train
    /// phase) without touching `stats`; the caller folds them in later.
    pub fn batch_norm2d_deferred(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &RunningStats<T>,
        phase: Phase,
        cfg: BatchNormConfig,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let out = batch_norm2d_forward(self.value(input), self.value(gamma), self.value(beta), stats, phase, cfg)?;
        let var = self.record(
            "batch_norm2d",
            out.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: out.xhat,
                inv_std: out.inv_std,
                batch_stats: phase == Phase::Train,
            },
            &[input, gamma, beta],
        )?;
        Ok((var, out.batch))
    }

    /// Batch normalization that updates `stats` in place during training.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats<T>,
        phase: Phase,
        cfg: BatchNormConfig,
    ) -> Result<Var> {
        let (var, batch) = self.batch_norm2d_deferred(input, gamma, beta, stats, phase, cfg)?;
        if let Some(batch) = batch {
            stats.update(&batch, cfg.momentum);
        }
        Ok(var)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::SeedableRng;

    fn affine<T: Scalar>(tape: &mut Tape<T>, c: usize) -> (Var, Var) {
        let g = tape.param(Tensor::full(&[c], T::one()));
        let b = tape.param(Tensor::zeros(&[c]));
        (g, b)
    }

    #[test]
    fn eval_identity_normalization() {
        let mut rng = Rng::seed_from_u64(1);
        let input = Tensor::<f64>::uniform(&[2, 3, 4, 4], -2.0, 2.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (g, b) = affine(&mut tape, 3);
        let mut stats = RunningStats::identity(3);
        let cfg = BatchNormConfig { eps: 0.0, momentum: 0.1 };
        let y = tape.batch_norm2d(x, g, b, &mut stats, Phase::Eval, cfg).unwrap();
        for (a, e) in tape.value(y).data().iter().zip(input.data()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert_eq!(stats, RunningStats::identity(3));
    }

    #[test]
    fn train_constant_input_maps_to_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 2, 3, 3], 7.5));
        let g = tape.param(Tensor::from_vec(&[2], vec![2.0, 3.0]).unwrap());
        let b = tape.param(Tensor::from_vec(&[2], vec![0.25, -1.0]).unwrap());
        let mut stats = RunningStats::identity(2);
        let y = tape
            .batch_norm2d(x, g, b, &mut stats, Phase::Train, BatchNormConfig::default())
            .unwrap();
        let out = tape.value(y).data();
        for (i, &v) in out.iter().enumerate() {
            let ch = (i / 9) % 2;
            let beta = [0.25, -1.0][ch];
            assert!((v - beta).abs() < 1e-9, "{v} vs {beta}");
        }
    }

    #[test]
    fn train_output_moments() {
        let mut rng = Rng::seed_from_u64(9);
        let input = Tensor::<f64>::uniform(&[4, 3, 5, 5], -3.0, 5.0, &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let (g, b) = affine(&mut tape, 3);
        let mut stats = RunningStats::identity(3);
        let y = tape
            .batch_norm2d(x, g, b, &mut stats, Phase::Train, BatchNormConfig::default())
            .unwrap();
        let out = tape.value(y).data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|s| out[(s * 3 + ch) * 25..][..25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_follow_ema() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 1, 2], vec![1.0, 3.0]).unwrap());
        let (g, b) = affine(&mut tape, 1);
        let mut stats = RunningStats::identity(1);
        tape.batch_norm2d(x, g, b, &mut stats, Phase::Train, BatchNormConfig::default())
            .unwrap();
        // batch mean 2, unbiased var 2
        assert!((stats.mean.data()[0] - 0.2).abs() < 1e-12);
        assert!((stats.var.data()[0] - (0.9 + 0.2)).abs() < 1e-12);

        let mut fresh = RunningStats::uninitialized(1);
        tape.batch_norm2d(x, g, b, &mut fresh, Phase::Train, BatchNormConfig::default())
            .unwrap();
        assert_eq!(fresh.mean.data(), &[2.0]);
        assert_eq!(fresh.var.data(), &[2.0]);
    }

    #[test]
    fn eval_rejects_uninitialized_stats() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let (g, b) = affine(&mut tape, 1);
        let mut stats = RunningStats::uninitialized(1);
        let r = tape.batch_norm2d(x, g, b, &mut stats, Phase::Eval, BatchNormConfig::default());
        assert_eq!(r.unwrap_err(), Error::UninitializedStatistics);
    }

    #[test]
    fn train_needs_two_values_per_channel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1, 1]));
        let (g, b) = affine(&mut tape, 1);
        let mut stats = RunningStats::identity(1);
        let r = tape.batch_norm2d(x, g, b, &mut stats, Phase::Train, BatchNormConfig::default());
        assert!(matches!(r, Err(Error::InvalidShape { .. })));
    }
}
