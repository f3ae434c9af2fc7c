//! Central finite-difference verification of analytic gradients (f64).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng as _, RngCore};

use crate::blocks::{ConvStack, ConvStackSpec, FusionBlock, FusionSpec};
use crate::error::Result;
use crate::loss::total_loss;
use crate::model::{model_forward, ModelConfig, Parameters};
use crate::ops::{BatchNormConfig, DropoutMode, RunningStats};
use crate::session::Session;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Phase, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Central-difference step for single ops.
    pub step: f64,
    /// Step for parameter probes through stacks and whole models, where
    /// many LeakyReLU kinks sit close to any probe.
    pub model_step: f64,
    /// Coordinates sampled per checked tensor (all of them if the tensor is
    /// smaller).
    pub samples_per_tensor: usize,
    /// Gradients below this magnitude are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
    /// Harness self-test: corrupt every analytic gradient by 1%.
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            model_step: 1e-5,
            samples_per_tensor: 64,
            abs_floor: 1e-6,
            seed: 0,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    pub checked: usize,
    /// Probes discarded because the +/- evaluations straddled a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<CheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(CheckEntry::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn pick_indices(numel: usize, count: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    if numel <= count {
        (0..numel).collect()
    } else {
        (0..count).map(|_| rng.random_range(0..numel)).collect()
    }
}

/// Checks `d loss / d input` for every input of a scalar-valued function
/// built on a fresh tape.
pub fn check_function<F>(name: &str, inputs: &[Tensor<f64>], tolerance: f64, opts: &GradCheckOptions, f: F) -> Result<CheckEntry>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape, vars, loss))
    };
    let (mut tape, vars, loss) = eval(inputs)?;
    tape.backward(loss)?;
    let pattern = tape.kink_pattern();
    let mut rng = crate::rng_for(opts.seed, 1);
    let mut tally = Tally::default();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for idx in pick_indices(inputs[k].numel(), opts.samples_per_tensor, &mut rng) {
            let mut probe = inputs.to_vec();
            let base = probe[k].data()[idx];
            let mut side = |delta: f64| -> Result<(f64, bool)> {
                probe[k].data_mut()[idx] = base + delta;
                let (t, _, l) = eval(&probe)?;
                Ok((t.value(l).data()[0], t.kink_pattern() == pattern))
            };
            let plus = side(opts.step)?;
            let minus = side(-opts.step)?;
            tally.record(analytic.data()[idx], plus, minus, opts);
        }
    }
    Ok(tally.finish(name, tolerance))
}

#[derive(Default)]
struct Tally {
    checked: usize,
    skipped: usize,
    worst: f64,
}

impl Tally {
    fn record(&mut self, analytic: f64, plus: (f64, bool), minus: (f64, bool), opts: &GradCheckOptions) {
        if !(plus.1 && minus.1) {
            self.skipped += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * opts.step);
        let a = if opts.inject_fault { analytic * 1.01 } else { analytic };
        self.worst = self.worst.max(rel_error(a, numeric, opts.abs_floor));
        self.checked += 1;
    }

    fn finish(self, name: &str, tolerance: f64) -> CheckEntry {
        CheckEntry {
            name: name.into(),
            checked: self.checked,
            skipped: self.skipped,
            max_rel_error: self.worst,
            tolerance,
        }
    }
}

/// Scalarizes an arbitrary output against a fixed random target so every
/// output element contributes a distinct weight.
fn scalarize(tape: &mut Tape<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let target = Tensor::uniform(&shape, -1.0, 1.0, &mut crate::rng_for(seed, 2));
    let t = tape.constant(target);
    let d = tape.sub(out, t)?;
    tape.mean_of_squares(d)
}

fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let m = 0.1 + 0.9 * rng.random::<f64>();
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).expect("shape")
}

/// Finite-difference check of every differentiable op.
pub fn check_ops(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    const TOL: f64 = 1e-5;
    let mut rng = crate::rng_for(opts.seed, 3);
    let seed = opts.seed;
    let u = |shape: &[usize], rng: &mut Rng| Tensor::<f64>::uniform(shape, -1.0, 1.0, rng);
    let mut entries = Vec::new();

    let x = u(&[2, 2, 4, 4], &mut rng);
    let w = u(&[3, 2, 3, 3], &mut rng);
    let b = u(&[3], &mut rng);
    entries.push(check_function("conv2d", &[x.clone(), w, b], TOL, opts, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
        scalarize(t, y, seed)
    })?);

    entries.push(check_function("replication_pad2d", &[u(&[1, 2, 3, 3], &mut rng)], TOL, opts, |t, v| {
        let y = t.replication_pad2d(v[0], 2)?;
        scalarize(t, y, seed)
    })?);

    let bn_in = u(&[2, 3, 3, 3], &mut rng);
    let gamma = Tensor::uniform(&[3], 0.5, 1.5, &mut rng);
    let beta = u(&[3], &mut rng);
    for (name, phase) in [("batch_norm2d[train]", Phase::Train), ("batch_norm2d[eval]", Phase::Eval)] {
        let mut stats = RunningStats::identity(3);
        stats.mean = u(&[3], &mut rng);
        stats.var = Tensor::uniform(&[3], 0.5, 2.0, &mut rng);
        entries.push(check_function(name, &[bn_in.clone(), gamma.clone(), beta.clone()], TOL, opts, |t, v| {
            let (y, _) = t.batch_norm2d_deferred(v[0], v[1], v[2], &stats, phase, BatchNormConfig::default())?;
            scalarize(t, y, seed)
        })?);
    }

    entries.push(check_function("leaky_relu", &[away_from_zero(&[2, 2, 4, 4], &mut rng)], TOL, opts, |t, v| {
        let y = t.leaky_relu(v[0], 0.25)?;
        scalarize(t, y, seed)
    })?);

    for (name, mode) in [("dropout[elementwise]", DropoutMode::Elementwise), ("dropout[channelwise]", DropoutMode::Channelwise)] {
        entries.push(check_function(name, &[u(&[2, 3, 3, 3], &mut rng)], TOL, opts, |t, v| {
            let y = t.dropout(v[0], 0.3, mode, Phase::Train, &mut crate::rng_for(seed, 4))?;
            scalarize(t, y, seed)
        })?);
    }

    let parts = [u(&[2, 1, 3, 3], &mut rng), u(&[2, 2, 3, 3], &mut rng)];
    entries.push(check_function("concat_channels", &parts, TOL, opts, |t, v| {
        let y = t.concat_channels(v)?;
        scalarize(t, y, seed)
    })?);
    entries.push(check_function("slice_channels", &[u(&[2, 4, 3, 3], &mut rng)], TOL, opts, |t, v| {
        let y = t.slice_channels(v[0], 1, 2)?;
        scalarize(t, y, seed)
    })?);

    let pair = [u(&[3, 4], &mut rng), u(&[3, 4], &mut rng)];
    entries.push(check_function("add", &pair, TOL, opts, |t, v| {
        let y = t.add(v[0], v[1])?;
        scalarize(t, y, seed)
    })?);
    entries.push(check_function("sub", &pair, TOL, opts, |t, v| {
        let y = t.sub(v[0], v[1])?;
        scalarize(t, y, seed)
    })?);
    entries.push(check_function("scale", &[u(&[3, 4], &mut rng)], TOL, opts, |t, v| {
        let y = t.scale(v[0], -1.7)?;
        scalarize(t, y, seed)
    })?);
    entries.push(check_function("mean_of_squares", &[u(&[16], &mut rng)], TOL, opts, |t, v| t.mean_of_squares(v[0]))?);
    entries.push(check_function("mean_of_abs", &[away_from_zero(&[16], &mut rng)], TOL, opts, |t, v| {
        let a = t.mean_of_abs(v[0])?;
        // square so the gradient depends on the value, not only its sign
        t.mean_of_squares(a)
    })?);

    Ok(GradCheckReport { entries })
}

/// Loss, gradients (when requested) and kink pattern of one evaluation.
struct Probe {
    loss: f64,
    grads: Vec<Tensor<f64>>,
    pattern: Vec<i8>,
}

fn probe_session(session: &mut Session<f64>, loss: Var, want_grads: bool) -> Result<Probe> {
    let value = session.tape.value(loss).data()[0];
    let grads = if want_grads {
        session.backward(loss)?;
        session.gradients()?
    } else {
        Vec::new()
    };
    Ok(Probe {
        loss: value,
        grads,
        pattern: session.tape.kink_pattern(),
    })
}

/// Perturbs sampled parameters of a model-like object and compares.
fn check_parameters<P: Clone>(
    name: &str,
    params: &P,
    tolerance: f64,
    opts: &GradCheckOptions,
    learnables: impl Fn(&mut P) -> Vec<&mut Tensor<f64>>,
    evaluate: impl Fn(&P, bool) -> Result<Probe>,
) -> Result<CheckEntry> {
    let base_probe = evaluate(params, true)?;
    let mut rng = crate::rng_for(opts.seed, 5);
    let mut probe = params.clone();
    let count = learnables(&mut probe).len();
    let opts = &GradCheckOptions {
        step: opts.model_step,
        ..*opts
    };
    let mut tally = Tally::default();
    for k in 0..count {
        let numel = learnables(&mut probe)[k].numel();
        for idx in pick_indices(numel, opts.samples_per_tensor, &mut rng) {
            let base = learnables(&mut probe)[k].data()[idx];
            let mut side = |delta: f64| -> Result<(f64, bool)> {
                learnables(&mut probe)[k].data_mut()[idx] = base + delta;
                let p = evaluate(&probe, false)?;
                Ok((p.loss, p.pattern == base_probe.pattern))
            };
            let plus = side(opts.step)?;
            let minus = side(-opts.step)?;
            learnables(&mut probe)[k].data_mut()[idx] = base;
            tally.record(base_probe.grads[k].data()[idx], plus, minus, opts);
        }
    }
    Ok(tally.finish(name, tolerance))
}

fn stack_entry(name: &str, stack: ConvStack<f64>, input: Tensor<f64>, tol: f64, opts: &GradCheckOptions) -> Result<CheckEntry> {
    let seed = opts.seed;
    check_parameters(
        name,
        &stack,
        tol,
        opts,
        |s| s.layers.iter_mut().flat_map(|l| l.learnables_mut()).collect(),
        |s, want_grads| {
            let mut session = Session::new(Phase::Train, BatchNormConfig::default(), crate::rng_for(seed, 6));
            let x = session.input(input.clone());
            let y = s.forward(&mut session, x)?;
            let loss = scalarize(&mut session.tape, y, seed)?;
            probe_session(&mut session, loss, want_grads)
        },
    )
}

/// Checks a reduced-width model end to end through the stage-wise loss.
pub fn check_model(config: ModelConfig, batch: usize, size: usize, tolerance: f64, opts: &GradCheckOptions) -> Result<CheckEntry> {
    let params = Parameters::<f64>::from_seed(config.clone(), opts.seed)?;
    let mut rng = crate::rng_for(opts.seed, 7);
    let c = config.image_channels;
    let clean = Tensor::<f64>::uniform(&[batch, c, size, size], 0.0, 1.0, &mut rng);
    let noise = Tensor::<f64>::uniform(&[batch, c, size, size], -0.2, 0.2, &mut rng);
    let noisy = clean.zip_map(&noise, "gradcheck", |a, b| a + b)?;
    let seed = opts.seed;
    check_parameters(
        &format!("model[T={},widths={}]", config.stages, config.fusion_width),
        &params,
        tolerance,
        opts,
        |p| p.learnables_mut(),
        |p, want_grads| {
            let mut session = p.session(Phase::Train, crate::rng_for(seed, 8));
            let y = session.input(noisy.clone());
            let x = session.input(clean.clone());
            let n = session.input(noise.clone());
            let vars = model_forward(&mut session, p, y)?;
            let loss = total_loss(&mut session.tape, &vars.stages, x, n, 1.0, 0.01)?;
            probe_session(&mut session, loss.total, want_grads)
        },
    )
}

/// The full suite: every op, one conv stack, one fusion block and the
/// tiny two-stage model (widths 4, 8x8 patches, dropout off).
pub fn run_suite(opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut report = check_ops(opts)?;
    let mut rng = crate::rng_for(opts.seed, 9);

    let spec = ConvStackSpec {
        final_layer_plain: true,
        ..ConvStackSpec::uniform(3, 2, 4, 2)
    };
    let stack = ConvStack::<f64>::init(spec, &mut rng)?;
    let input = Tensor::uniform(&[2, 2, 5, 5], -1.0, 1.0, &mut rng);
    report.entries.push(stack_entry("conv_stack", stack, input, 1e-4, opts)?);

    let fusion_spec = FusionSpec {
        image_channels: 1,
        width: 3,
        slope: 0.25,
        dropout_elem_p: 0.0,
        dropout_chan_p: 0.0,
    };
    let fusion = FusionBlock::<f64>::init(&fusion_spec, &mut rng)?;
    let inputs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(&[2, 1, 4, 4], -1.0, 1.0, &mut rng)).collect();
    let seed = opts.seed;
    report.entries.push(check_parameters(
        "fusion_block",
        &fusion,
        1e-4,
        opts,
        |f| f.stacks_mut().flat_map(|s| s.layers.iter_mut()).flat_map(|l| l.learnables_mut()).collect(),
        |f, want_grads| {
            let mut session = Session::new(Phase::Train, BatchNormConfig::default(), crate::rng_for(seed, 10));
            let v: Vec<Var> = inputs.iter().map(|t| session.input(t.clone())).collect();
            let y = f.forward(&mut session, v[0], v[1], v[2])?;
            let loss = scalarize(&mut session.tape, y, seed)?;
            probe_session(&mut session, loss, want_grads)
        },
    )?);

    let tiny = ModelConfig::reduced(4).without_dropout();
    report.entries.push(check_model(tiny, 2, 8, 1e-4, opts)?);
    Ok(report)
}
