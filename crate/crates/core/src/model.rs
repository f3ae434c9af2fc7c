//! Multi-stage model assembly.
//!
//! `y_1 = y`; for every stage but the last, `(C_i, N_i) = S_i(y_i)` and
//! `y_{i+1} = F_i(y_1, C_i, N_i)`; the last stage's clean output is the
//! denoised image. Without fusion blocks the next stage consumes `C_i`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::RngCore;

use crate::blocks::{ConvLayer, ConvStack, ConvStackSpec, FusionBlock, FusionSpec, BRANCH_WIDTHS, FUSION_WIDTH};
use crate::error::{Error, Result};
use crate::ops::{BatchNormConfig, BatchStats};
use crate::scalar::Scalar;
use crate::session::Session;
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub stages: usize,
    pub image_channels: usize,
    /// Hidden widths of each branch block; a final plain layer maps back to
    /// `image_channels`.
    pub branch_widths: Vec<usize>,
    pub fusion_width: usize,
    pub slope: f64,
    pub dropout_elem_p: f64,
    pub dropout_chan_p: f64,
    pub fusion_enabled: bool,
    pub bn: BatchNormConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            stages: 2,
            image_channels: 1,
            branch_widths: BRANCH_WIDTHS.to_vec(),
            fusion_width: FUSION_WIDTH,
            slope: 0.25,
            dropout_elem_p: 0.05,
            dropout_chan_p: 0.05,
            fusion_enabled: true,
            bn: BatchNormConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Reduced-width model: every branch and fusion layer has `width`
    /// features.
    pub fn reduced(width: usize) -> Self {
        ModelConfig {
            branch_widths: alloc::vec![width; BRANCH_WIDTHS.len()],
            fusion_width: width,
            ..Self::default()
        }
    }

    pub fn without_dropout(mut self) -> Self {
        self.dropout_elem_p = 0.0;
        self.dropout_chan_p = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidArgument("model needs at least one stage".into()));
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!(
                "image channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        self.branch_spec().validate()?;
        for spec in self.fusion_spec().stack_specs() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn branch_spec(&self) -> ConvStackSpec {
        ConvStackSpec::branch(self.image_channels, &self.branch_widths, self.slope)
    }

    pub fn fusion_spec(&self) -> FusionSpec {
        FusionSpec {
            image_channels: self.image_channels,
            width: self.fusion_width,
            slope: self.slope,
            dropout_elem_p: self.dropout_elem_p,
            dropout_chan_p: self.dropout_chan_p,
        }
    }

    pub fn fusion_count(&self) -> usize {
        if self.fusion_enabled {
            self.stages - 1
        } else {
            0
        }
    }

    /// Learnable scalars implied by the width schedules.
    pub fn parameter_count(&self) -> usize {
        self.stages * 2 * self.branch_spec().parameter_count()
            + self.fusion_count() * self.fusion_spec().parameter_count()
    }
}

/// The two independent branch blocks of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams<T> {
    pub clean: ConvStack<T>,
    pub noise: ConvStack<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<T> {
    pub config: ModelConfig,
    pub stages: Vec<StageParams<T>>,
    pub fusions: Vec<FusionBlock<T>>,
}

/// Tape handles of one stage's outputs.
#[derive(Debug, Clone, Copy)]
pub struct StageVars {
    pub clean: Var,
    pub noise: Var,
}

/// Materialized `(C_i, N_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput<T> {
    pub clean: Tensor<T>,
    pub noise: Tensor<T>,
}

/// Handles produced by [`model_forward`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub stages: Vec<StageVars>,
    /// Inputs `(y_1, C_i, N_i)` of every fusion call, in order.
    pub fusion_inputs: Vec<[Var; 3]>,
    /// Stage inputs `y_1 .. y_T`.
    pub stage_inputs: Vec<Var>,
    pub denoised: Var,
}

impl ModelVars {
    pub fn stage_outputs<T: Scalar>(&self, session: &Session<T>) -> Vec<StageOutput<T>> {
        self.stages
            .iter()
            .map(|s| StageOutput {
                clean: session.tape.value(s.clean).clone(),
                noise: session.tape.value(s.noise).clone(),
            })
            .collect()
    }
}

impl<T: Scalar> Parameters<T> {
    /// Random initialization, deterministic in `rng`.
    pub fn init(config: ModelConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let branch = config.branch_spec();
        let fusion = config.fusion_spec();
        let mut stages = Vec::with_capacity(config.stages);
        let mut fusions = Vec::with_capacity(config.fusion_count());
        for i in 0..config.stages {
            stages.push(StageParams {
                clean: ConvStack::init(branch.clone(), rng)?,
                noise: ConvStack::init(branch.clone(), rng)?,
            });
            if i + 1 < config.stages && config.fusion_enabled {
                fusions.push(FusionBlock::init(&fusion, rng)?);
            }
        }
        Ok(Parameters {
            config,
            stages,
            fusions,
        })
    }

    pub fn from_seed(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::init(config, &mut crate::rng_for(seed, 0))
    }

    /// Stacks in forward order, each with its hierarchical prefix.
    pub fn named_stacks(&self) -> Vec<(String, &ConvStack<T>)> {
        let mut out = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            out.push((format!("stage{}.clean", i + 1), &stage.clean));
            out.push((format!("stage{}.noise", i + 1), &stage.noise));
            if let Some(fusion) = self.fusions.get(i) {
                for (name, stack) in FusionBlock::<T>::STACK_NAMES.iter().zip(fusion.stacks()) {
                    out.push((format!("fusion{}.{}", i + 1, name), stack));
                }
            }
        }
        out
    }

    fn stacks_mut(&mut self) -> Vec<&mut ConvStack<T>> {
        let mut out = Vec::new();
        let mut fusions = self.fusions.iter_mut();
        for stage in self.stages.iter_mut() {
            out.push(&mut stage.clean);
            out.push(&mut stage.noise);
            if let Some(f) = fusions.next() {
                out.extend(f.stacks_mut());
            }
        }
        out
    }

    /// Every conv layer in canonical (forward) order.
    pub fn layers(&self) -> Vec<&ConvLayer<T>> {
        self.named_stacks()
            .into_iter()
            .flat_map(|(_, s)| s.layers.iter())
            .collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut ConvLayer<T>> {
        self.stacks_mut()
            .into_iter()
            .flat_map(|s| s.layers.iter_mut())
            .collect()
    }

    /// Learnable tensors in the order [`Session::gradients`] reports.
    pub fn learnables(&self) -> Vec<&Tensor<T>> {
        self.layers().into_iter().flat_map(|l| l.learnables()).collect()
    }

    pub fn learnables_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| l.learnables_mut())
            .collect()
    }

    pub fn learnable_count(&self) -> usize {
        self.layers().iter().map(|l| l.learnables().count()).sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers()
            .iter()
            .flat_map(|l| l.learnables())
            .map(Tensor::numel)
            .sum()
    }

    /// Every stored tensor (learnables and running statistics) under its
    /// hierarchical name, e.g. `stage1.clean.layer3.gamma`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, stack) in self.named_stacks() {
            for (j, layer) in stack.layers.iter().enumerate() {
                let p = format!("{prefix}.layer{}", j + 1);
                out.push((format!("{p}.weight"), &layer.weight));
                if let Some(b) = &layer.bias {
                    out.push((format!("{p}.bias"), b));
                }
                if let Some(n) = &layer.norm {
                    out.push((format!("{p}.gamma"), &n.gamma));
                    out.push((format!("{p}.beta"), &n.beta));
                    out.push((format!("{p}.run_mean"), &n.stats.mean));
                    out.push((format!("{p}.run_var"), &n.stats.var));
                }
            }
        }
        out
    }

    /// Mutable counterpart of [`Parameters::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut tensors = Vec::with_capacity(names.len());
        for layer in self.layers_mut() {
            tensors.push(&mut layer.weight);
            if let Some(b) = layer.bias.as_mut() {
                tensors.push(b);
            }
            if let Some(n) = layer.norm.as_mut() {
                tensors.push(&mut n.gamma);
                tensors.push(&mut n.beta);
                tensors.push(&mut n.stats.mean);
                tensors.push(&mut n.stats.var);
            }
        }
        names.into_iter().zip(tensors).collect()
    }

    /// Marks every running statistic as holding real data, e.g. after the
    /// tensors were filled from a checkpoint.
    pub fn mark_statistics_initialized(&mut self) {
        for layer in self.layers_mut() {
            if let Some(n) = layer.norm.as_mut() {
                n.stats.initialized = true;
            }
        }
    }

    /// Folds one pass's batch statistics into the running statistics.
    pub fn apply_batch_stats(&mut self, stats: &[Option<BatchStats<T>>]) {
        let momentum = self.config.bn.momentum;
        let layers = self.layers_mut();
        debug_assert_eq!(layers.len(), stats.len());
        for (layer, s) in layers.into_iter().zip(stats) {
            if let (Some(norm), Some(s)) = (layer.norm.as_mut(), s) {
                norm.stats.update(s, momentum);
            }
        }
    }

    pub fn session(&self, phase: crate::Phase, rng: crate::Rng) -> Session<T> {
        Session::new(phase, self.config.bn, rng)
    }

    /// Eval-phase denoising of an NCHW batch; returns `C_T`.
    pub fn denoise(&self, noisy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut session = Session::eval(self.config.bn);
        let y = session.input(noisy.clone());
        let vars = model_forward(&mut session, self, y)?;
        Ok(session.tape.value(vars.denoised).clone())
    }
}

/// One stage: both branch blocks applied to the same input.
pub fn stage_forward<T: Scalar>(session: &mut Session<T>, stage: &StageParams<T>, input: Var) -> Result<StageVars> {
    let clean = stage.clean.forward(session, input)?;
    let noise = stage.noise.forward(session, input)?;
    Ok(StageVars { clean, noise })
}

pub fn model_forward<T: Scalar>(session: &mut Session<T>, params: &Parameters<T>, y: Var) -> Result<ModelVars> {
    let (_, c, _, _) = session.tape.value(y).dims4("model_forward")?;
    if c != params.config.image_channels {
        return Err(Error::ChannelMismatch {
            op: "model_forward",
            expected: params.config.image_channels,
            got: c,
        });
    }
    let mut stages = Vec::with_capacity(params.stages.len());
    let mut fusion_inputs = Vec::with_capacity(params.fusions.len());
    let mut stage_inputs = Vec::with_capacity(params.stages.len());
    let mut input = y;
    for (i, stage) in params.stages.iter().enumerate() {
        stage_inputs.push(input);
        let out = stage_forward(session, stage, input)?;
        stages.push(out);
        if i + 1 == params.stages.len() {
            break;
        }
        input = match params.fusions.get(i) {
            Some(fusion) => {
                fusion_inputs.push([y, out.clean, out.noise]);
                fusion.forward(session, y, out.clean, out.noise)?
            }
            None => out.clean,
        };
    }
    let denoised = stages.last().ok_or(Error::NoStages)?.clean;
    Ok(ModelVars {
        stages,
        fusion_inputs,
        stage_inputs,
        denoised,
    })
}
