use alloc::format;
use alloc::vec::Vec;

use rand::{Rng as _, RngCore};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;
use crate::Phase;

/// Which units a dropout mask covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    /// Independent per element.
    Elementwise,
    /// One draw per `(n, c)` feature map.
    Channelwise,
}

pub fn leaky_relu_forward<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

/// Inverted-dropout mask: 0 for dropped units, `1/(1-p)` for survivors.
pub fn dropout_mask<T: Scalar>(shape: &[usize], p: f64, mode: DropoutMode, rng: &mut dyn RngCore) -> Result<Vec<T>> {
    let numel: usize = shape.iter().product();
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    let mut draw = || if rng.random::<f64>() < p { T::zero() } else { keep };
    Ok(match mode {
        DropoutMode::Elementwise => (0..numel).map(|_| draw()).collect(),
        DropoutMode::Channelwise => {
            if shape.len() != 4 {
                return Err(Error::InvalidShape {
                    op: "dropout",
                    msg: format!("channelwise dropout needs NCHW, got {shape:?}"),
                });
            }
            let hw = shape[2] * shape[3];
            let mut mask = Vec::with_capacity(numel);
            for _ in 0..shape[0] * shape[1] {
                let m = draw();
                mask.extend(core::iter::repeat_n(m, hw));
            }
            mask
        }
    })
}

impl<T: Scalar> Tape<T> {
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Result<Var> {
        if !(slope >= T::zero() && slope < T::one()) {
            return Err(Error::InvalidArgument(format!("leaky_relu slope {slope} outside [0,1)")));
        }
        let value = leaky_relu_forward(self.value(input), slope);
        self.record("leaky_relu", value, Op::LeakyRelu { input, slope }, &[input])
    }

    /// Inverted dropout. Eval phase and `p == 0` return `input` unchanged.
    pub fn dropout(&mut self, input: Var, p: f64, mode: DropoutMode, phase: Phase, rng: &mut dyn RngCore) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} outside [0,1)")));
        }
        if phase == Phase::Eval || p == 0.0 {
            return Ok(input);
        }
        let mask = dropout_mask::<T>(self.shape(input), p, mode, rng)?;
        let mut value = self.value(input).clone();
        for (v, &m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.record("dropout", value, Op::Dropout { input, mask }, &[input])
    }
}
