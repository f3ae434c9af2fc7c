//! Composite blocks: the plain convolution stack, the 9-layer branch block
//! and the fusion block with its A/B/C/D sub-stacks.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::ops::{DropoutMode, RunningStats};
use crate::scalar::Scalar;
use crate::session::Session;
use crate::tape::Var;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

/// Hidden widths of the branch block before its final image-width layer.
pub const BRANCH_WIDTHS: [usize; 8] = [32, 64, 128, 256, 256, 128, 64, 32];

/// Feature width of every fusion sub-stack layer.
pub const FUSION_WIDTH: usize = 32;

/// Depths of fusion sub-stacks A, B, C and D.
pub const FUSION_DEPTHS: [usize; 4] = [3, 4, 5, 6];

/// Shape of a stack of 3x3 conv layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackSpec {
    pub in_channels: usize,
    /// Output width of each layer; the last entry is the stack's output width.
    pub widths: Vec<usize>,
    pub slope: f64,
    /// Last layer is a bare conv (with bias) instead of conv/BN/LeakyReLU.
    pub final_layer_plain: bool,
    pub dropout_elem_p: f64,
    pub dropout_chan_p: f64,
}

impl ConvStackSpec {
    pub fn uniform(layer_count: usize, in_channels: usize, hidden: usize, out_channels: usize) -> Self {
        let mut widths = vec![hidden; layer_count];
        if let Some(last) = widths.last_mut() {
            *last = out_channels;
        }
        ConvStackSpec {
            in_channels,
            widths,
            slope: 0.25,
            final_layer_plain: false,
            dropout_elem_p: 0.0,
            dropout_chan_p: 0.0,
        }
    }

    /// Branch block: `hidden` widths followed by a plain layer back to
    /// `image_channels`.
    pub fn branch(image_channels: usize, hidden: &[usize], slope: f64) -> Self {
        let mut widths = hidden.to_vec();
        widths.push(image_channels);
        ConvStackSpec {
            in_channels: image_channels,
            widths,
            slope,
            final_layer_plain: true,
            dropout_elem_p: 0.0,
            dropout_chan_p: 0.0,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len()
    }

    pub fn out_channels(&self) -> usize {
        self.widths.last().copied().unwrap_or(self.in_channels)
    }

    fn is_plain(&self, layer: usize) -> bool {
        self.final_layer_plain && layer + 1 == self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.in_channels == 0 || self.widths.contains(&0) {
            return Err(Error::InvalidArgument("conv stack needs >= 1 layer and nonzero widths".into()));
        }
        if !(0.0..1.0).contains(&self.slope)
            || !(0.0..1.0).contains(&self.dropout_elem_p)
            || !(0.0..1.0).contains(&self.dropout_chan_p)
        {
            return Err(Error::InvalidArgument("slope and dropout rates must lie in [0,1)".into()));
        }
        Ok(())
    }

    /// Number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        let mut cin = self.in_channels;
        let mut total = 0;
        for (i, &cout) in self.widths.iter().enumerate() {
            total += cout * cin * KERNEL * KERNEL;
            total += if self.is_plain(i) { cout } else { 2 * cout };
            cin = cout;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub stats: RunningStats<T>,
}

/// One 3x3 convolution. Normalized layers carry no conv bias (the batch
/// mean would cancel it); plain layers carry a bias and no normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub norm: Option<NormParams<T>>,
}

impl<T: Scalar> ConvLayer<T> {
    /// Fan-in scaled uniform weights with LeakyReLU gain.
    pub fn init(cin: usize, cout: usize, plain: bool, slope: f64, rng: &mut dyn RngCore) -> Self {
        let fan_in = (cin * KERNEL * KERNEL) as f64;
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = Tensor::uniform(&[cout, cin, KERNEL, KERNEL], -bound, bound, rng);
        if plain {
            ConvLayer {
                weight,
                bias: Some(Tensor::zeros(&[cout])),
                norm: None,
            }
        } else {
            ConvLayer {
                weight,
                bias: None,
                norm: Some(NormParams {
                    gamma: Tensor::full(&[cout], T::one()),
                    beta: Tensor::zeros(&[cout]),
                    stats: RunningStats::identity(cout),
                }),
            }
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Learnable tensors in canonical order: weight, bias, gamma, beta.
    pub fn learnables(&self) -> impl Iterator<Item = &Tensor<T>> {
        let (g, b) = match &self.norm {
            Some(n) => (Some(&n.gamma), Some(&n.beta)),
            None => (None, None),
        };
        [Some(&self.weight), self.bias.as_ref(), g, b].into_iter().flatten()
    }

    pub fn learnables_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        let (g, b) = match &mut self.norm {
            Some(n) => (Some(&mut n.gamma), Some(&mut n.beta)),
            None => (None, None),
        };
        [Some(&mut self.weight), self.bias.as_mut(), g, b].into_iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<T> {
    pub spec: ConvStackSpec,
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> ConvStack<T> {
    pub fn init(spec: ConvStackSpec, rng: &mut dyn RngCore) -> Result<Self> {
        spec.validate()?;
        let mut cin = spec.in_channels;
        let mut layers = Vec::with_capacity(spec.layer_count());
        for (i, &cout) in spec.widths.iter().enumerate() {
            layers.push(ConvLayer::init(cin, cout, spec.is_plain(i), spec.slope, rng));
            cin = cout;
        }
        Ok(ConvStack { spec, layers })
    }

    /// conv -> BN -> LeakyReLU -> dropout per layer; a plain final layer is
    /// conv only.
    pub fn forward(&self, session: &mut Session<T>, input: Var) -> Result<Var> {
        let got = session.tape.value(input).dims4("conv_stack")?.1;
        if got != self.spec.in_channels {
            return Err(Error::ChannelMismatch {
                op: "conv_stack",
                expected: self.spec.in_channels,
                got,
            });
        }
        let slope = T::from_f64_lossy(self.spec.slope);
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            x = session.conv_layer(layer, x)?;
            if self.spec.is_plain(i) {
                continue;
            }
            x = session.tape.leaky_relu(x, slope)?;
            x = session.dropout(x, self.spec.dropout_elem_p, DropoutMode::Elementwise)?;
            x = session.dropout(x, self.spec.dropout_chan_p, DropoutMode::Channelwise)?;
        }
        Ok(x)
    }
}

/// Fusion block mixing the noisy input `y1`, a predicted clean image and a
/// predicted noise map into the next stage's input.
///
/// First layer: each pair `(y1,C)`, `(y1,N)`, `(C,N)` goes through its own
/// B-stack, and the input left out of that pair (`N`, `C`, `y1`) through
/// its own A-stack. Second layer: the six encodings are concatenated into
/// the C-stack; the C output is concatenated with the three raw inputs and
/// decoded by the D-stack to an image.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBlock<T> {
    pub a: [ConvStack<T>; 3],
    pub b: [ConvStack<T>; 3],
    pub c: ConvStack<T>,
    pub d: ConvStack<T>,
}

/// Hyperparameters shared by the four fusion sub-stacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionSpec {
    pub image_channels: usize,
    pub width: usize,
    pub slope: f64,
    pub dropout_elem_p: f64,
    pub dropout_chan_p: f64,
}

impl FusionSpec {
    pub fn stack_specs(&self) -> [ConvStackSpec; 4] {
        let c = self.image_channels;
        let f = self.width;
        let with = |mut s: ConvStackSpec, plain: bool| {
            s.slope = self.slope;
            s.dropout_elem_p = self.dropout_elem_p;
            s.dropout_chan_p = self.dropout_chan_p;
            s.final_layer_plain = plain;
            s
        };
        let [da, db, dc, dd] = FUSION_DEPTHS;
        [
            with(ConvStackSpec::uniform(da, c, f, f), false),
            with(ConvStackSpec::uniform(db, 2 * c, f, f), false),
            with(ConvStackSpec::uniform(dc, 6 * f, f, f), false),
            with(ConvStackSpec::uniform(dd, f + 3 * c, f, c), true),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        let [a, b, c, d] = self.stack_specs();
        3 * a.parameter_count() + 3 * b.parameter_count() + c.parameter_count() + d.parameter_count()
    }
}

impl<T: Scalar> FusionBlock<T> {
    pub fn init(spec: &FusionSpec, rng: &mut dyn RngCore) -> Result<Self> {
        let [sa, sb, sc, sd] = spec.stack_specs();
        let mut stack = |s: &ConvStackSpec| ConvStack::init(s.clone(), rng);
        Ok(FusionBlock {
            a: [stack(&sa)?, stack(&sa)?, stack(&sa)?],
            b: [stack(&sb)?, stack(&sb)?, stack(&sb)?],
            c: stack(&sc)?,
            d: stack(&sd)?,
        })
    }

    /// Sub-stacks in canonical order: A1..A3, B1..B3, C, D.
    pub fn stacks(&self) -> impl Iterator<Item = &ConvStack<T>> {
        self.a.iter().chain(&self.b).chain([&self.c, &self.d])
    }

    pub fn stacks_mut(&mut self) -> impl Iterator<Item = &mut ConvStack<T>> {
        self.a.iter_mut().chain(&mut self.b).chain([&mut self.c, &mut self.d])
    }

    /// Names matching [`FusionBlock::stacks`].
    pub const STACK_NAMES: [&'static str; 8] = ["A1", "A2", "A3", "B1", "B2", "B3", "C", "D"];

    pub fn forward(&self, session: &mut Session<T>, y1: Var, clean: Var, noise: Var) -> Result<Var> {
        let tape = &session.tape;
        for v in [clean, noise] {
            if tape.shape(v) != tape.shape(y1) {
                return Err(Error::ShapeMismatch {
                    op: "fusion_forward",
                    lhs: tape.shape(y1).to_vec(),
                    rhs: tape.shape(v).to_vec(),
                });
            }
        }
        let singles = [noise, clean, y1];
        let pairs = [[y1, clean], [y1, noise], [clean, noise]];
        let mut encoded_single = Vec::with_capacity(3);
        for (stack, &x) in self.a.iter().zip(&singles) {
            encoded_single.push(stack.forward(session, x)?);
        }
        let mut encoded = Vec::with_capacity(6);
        for ((stack, pair), single) in self.b.iter().zip(&pairs).zip(encoded_single) {
            let x = session.tape.concat_channels(pair)?;
            encoded.push(stack.forward(session, x)?);
            encoded.push(single);
        }
        let mixed = session.tape.concat_channels(&encoded)?;
        let mixed = self.c.forward(session, mixed)?;
        let composed = session.tape.concat_channels(&[mixed, y1, clean, noise])?;
        self.d.forward(session, composed)
    }
}
