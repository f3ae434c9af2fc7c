//! Stage-wise supervised loss.
//!
//! Each term is `0.5 * mean((p - t)^2) + beta * mean(|p - t|)`, a per-pixel
//! mean so that `alpha` and `beta` do not depend on patch size. The total
//! sums `L_C(C_i, x) + alpha * L_N(N_i, n)` over every stage.

use crate::error::{Error, Result};
use crate::model::StageVars;
use crate::ops::reduce;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Value of one loss term, computed directly on tensors.
pub fn loss_value<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, beta: f64) -> Result<T> {
    let diff = pred.zip_map(target, "loss", |a, b| a - b)?;
    let half = T::from_f64_lossy(0.5);
    let mut value = half * reduce::mean_of_squares(&diff)?;
    if beta != 0.0 {
        value += T::from_f64_lossy(beta) * reduce::mean_of_abs(&diff)?;
    }
    Ok(value)
}

fn loss_term<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, beta: f64) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.mean_of_squares(diff)?;
    let l2 = tape.scale(sq, T::from_f64_lossy(0.5))?;
    if beta == 0.0 {
        return Ok(l2);
    }
    let abs = tape.mean_of_abs(diff)?;
    let l1 = tape.scale(abs, T::from_f64_lossy(beta))?;
    tape.add(l2, l1)
}

/// Loss on a predicted clean image.
pub fn loss_clean<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, beta: f64) -> Result<Var> {
    loss_term(tape, pred, target, beta)
}

/// Loss on a predicted noise map; same form as [`loss_clean`].
pub fn loss_noise<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var, beta: f64) -> Result<Var> {
    loss_term(tape, pred, target, beta)
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars<T> {
    pub total: Var,
    /// Sum of clean-image terms over stages.
    pub clean: T,
    /// Sum of noise terms over stages (before `alpha`).
    pub noise: T,
}

pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    stages: &[StageVars],
    clean_target: Var,
    noise_target: Var,
    alpha: f64,
    beta: f64,
) -> Result<LossVars<T>> {
    if stages.is_empty() {
        return Err(Error::NoStages);
    }
    let alpha_t = T::from_f64_lossy(alpha);
    let mut total: Option<Var> = None;
    let (mut clean_sum, mut noise_sum) = (T::zero(), T::zero());
    for stage in stages {
        let lc = loss_clean(tape, stage.clean, clean_target, beta)?;
        let ln = loss_noise(tape, stage.noise, noise_target, beta)?;
        clean_sum += tape.value(lc).data()[0];
        noise_sum += tape.value(ln).data()[0];
        let weighted = tape.scale(ln, alpha_t)?;
        let stage_loss = tape.add(lc, weighted)?;
        total = Some(match total {
            Some(t) => tape.add(t, stage_loss)?,
            None => stage_loss,
        });
    }
    Ok(LossVars {
        total: total.expect("at least one stage"),
        clean: clean_sum,
        noise: noise_sum,
    })
}
