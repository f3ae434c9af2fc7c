//! One forward (and optionally backward) pass over a parameter set.

use alloc::vec::Vec;

use crate::blocks::ConvLayer;
use crate::error::{Error, Result};
use crate::ops::{BatchNormConfig, BatchStats, DropoutMode};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Phase, Rng};

/// Tape variables bound to one convolution layer's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub gamma: Option<Var>,
    pub beta: Option<Var>,
}

/// Forward-pass context: a fresh tape, the phase, the dropout generator and
/// a record of every layer bound so far.
///
/// Parameters are only read during a pass. Layers are bound in visiting
/// order, and [`Session::gradients`] / [`Session::batch_stats`] report in
/// that same order, which is the canonical order of
/// [`Parameters::layers`](crate::model::Parameters::layers).
pub struct Session<T> {
    pub tape: Tape<T>,
    pub phase: Phase,
    pub bn: BatchNormConfig,
    rng: Rng,
    bound: Vec<LayerVars>,
    batch_stats: Vec<Option<BatchStats<T>>>,
}

impl<T: Scalar> Session<T> {
    pub fn new(phase: Phase, bn: BatchNormConfig, rng: Rng) -> Self {
        Session {
            tape: Tape::new(),
            phase,
            bn,
            rng,
            bound: Vec::new(),
            batch_stats: Vec::new(),
        }
    }

    /// Eval-phase session; no randomness is drawn.
    pub fn eval(bn: BatchNormConfig) -> Self {
        Self::new(Phase::Eval, bn, crate::rng_for(0, 0))
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.tape.constant(value)
    }

    pub fn bind(&mut self, layer: &ConvLayer<T>) -> LayerVars {
        let weight = self.tape.param(layer.weight.clone());
        let bias = layer.bias.as_ref().map(|b| self.tape.param(b.clone()));
        let (gamma, beta) = match &layer.norm {
            Some(n) => (
                Some(self.tape.param(n.gamma.clone())),
                Some(self.tape.param(n.beta.clone())),
            ),
            None => (None, None),
        };
        let vars = LayerVars {
            weight,
            bias,
            gamma,
            beta,
        };
        self.bound.push(vars);
        vars
    }

    /// Convolution layer forward: conv, then (if present) batch norm.
    pub fn conv_layer(&mut self, layer: &ConvLayer<T>, input: Var) -> Result<Var> {
        let vars = self.bind(layer);
        let k = layer.weight.shape()[2];
        let y = self.tape.conv2d(input, vars.weight, vars.bias, (k - 1) / 2)?;
        match (&layer.norm, vars.gamma, vars.beta) {
            (Some(norm), Some(g), Some(b)) => {
                let (y, stats) = self.tape.batch_norm2d_deferred(y, g, b, &norm.stats, self.phase, self.bn)?;
                self.batch_stats.push(stats);
                Ok(y)
            }
            _ => {
                self.batch_stats.push(None);
                Ok(y)
            }
        }
    }

    pub fn dropout(&mut self, input: Var, p: f64, mode: DropoutMode) -> Result<Var> {
        self.tape.dropout(input, p, mode, self.phase, &mut self.rng)
    }

    pub fn bound_layers(&self) -> &[LayerVars] {
        &self.bound
    }

    /// Batch statistics per bound layer (`None` for plain layers or eval).
    pub fn batch_stats(&self) -> &[Option<BatchStats<T>>] {
        &self.batch_stats
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of all bound parameters, flattened per layer as weight,
    /// bias, gamma, beta (absent entries skipped).
    pub fn gradients(&self) -> Result<Vec<Tensor<T>>> {
        let mut out = Vec::new();
        for (i, layer) in self.bound.iter().enumerate() {
            let vars = [Some(layer.weight), layer.bias, layer.gamma, layer.beta];
            for var in vars.into_iter().flatten() {
                let grad = match self.tape.grad(var) {
                    Some(g) => g.clone(),
                    None if self.tape.requires_grad(var) => Tensor::zeros(self.tape.shape(var)),
                    None => return Err(Error::MissingGradient(i)),
                };
                out.push(grad);
            }
        }
        Ok(out)
    }
}
