use alloc::vec;

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Extends each `H x W` plane by `pad` cells on every side, copying the
/// nearest interior value.
pub fn replication_pad2d_forward<T: Scalar>(input: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4("replication_pad2d")?;
    if pad == 0 {
        return Ok(input.clone());
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); n * c * ph * pw];
    let src = input.data();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut out[plane * ph * pw..(plane + 1) * ph * pw];
        for (oy, row) in d.chunks_exact_mut(pw).enumerate() {
            let sy = clamp_index(oy, pad, h);
            let srow = &s[sy * w..(sy + 1) * w];
            row[..pad].fill(srow[0]);
            row[pad..pad + w].copy_from_slice(srow);
            row[pad + w..].fill(srow[w - 1]);
        }
    }
    Tensor::from_vec(&[n, c, ph, pw], out)
}

/// Sums each padded cell's gradient back into its source cell.
pub fn replication_pad2d_backward<T: Scalar>(grad: &Tensor<T>, input_shape: &[usize], pad: usize) -> Tensor<T> {
    if pad == 0 {
        return grad.clone();
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(input_shape);
    let g = grad.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let gp = &g[plane * ph * pw..(plane + 1) * ph * pw];
        let dp = &mut dst[plane * h * w..(plane + 1) * h * w];
        for (oy, grow) in gp.chunks_exact(pw).enumerate() {
            let sy = clamp_index(oy, pad, h);
            let drow = &mut dp[sy * w..(sy + 1) * w];
            for (ox, &v) in grow.iter().enumerate() {
                drow[clamp_index(ox, pad, w)] += v;
            }
        }
    }
    out
}

#[inline]
fn clamp_index(padded: usize, pad: usize, extent: usize) -> usize {
    padded.saturating_sub(pad).min(extent - 1)
}

impl<T: Scalar> Tape<T> {
    pub fn replication_pad2d(&mut self, input: Var, pad: usize) -> Result<Var> {
        let value = replication_pad2d_forward(self.value(input), pad)?;
        self.record("replication_pad2d", value, Op::Pad { input, pad }, &[input])
    }
}
