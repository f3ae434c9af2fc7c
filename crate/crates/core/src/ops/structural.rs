use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Concatenates NCHW tensors along the channel axis, in argument order.
pub fn concat_channels_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or(Error::EmptyTensor)?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        total += tc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * total * hw);
    for s in 0..n {
        for t in inputs {
            let c = t.shape()[1];
            data.extend_from_slice(&t.data()[s * c * hw..(s + 1) * c * hw]);
        }
    }
    Tensor::from_vec(&[n, total, h, w], data)
}

/// Inverse of [`concat_channels_forward`] for the given channel widths.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let s = t.shape();
    let (n, total, hw) = (s[0], s[1], s[2] * s[3]);
    let mut offset = 0;
    widths
        .iter()
        .map(|&c| {
            let mut data = Vec::with_capacity(n * c * hw);
            for sample in 0..n {
                let base = (sample * total + offset) * hw;
                data.extend_from_slice(&t.data()[base..base + c * hw]);
            }
            offset += c;
            Tensor::from_vec(&[n, c, s[2], s[3]], data).expect("split shape")
        })
        .collect()
}

/// Places `part` at channel offset `start` of an otherwise zero tensor.
pub fn embed_channels<T: Scalar>(part: &Tensor<T>, full_shape: &[usize], start: usize) -> Tensor<T> {
    let mut out = Tensor::zeros(full_shape);
    let (n, total, hw) = (full_shape[0], full_shape[1], full_shape[2] * full_shape[3]);
    let c = part.shape()[1];
    for sample in 0..n {
        let dst = (sample * total + start) * hw;
        out.data_mut()[dst..dst + c * hw].copy_from_slice(&part.data()[sample * c * hw..(sample + 1) * c * hw]);
    }
    out
}

impl<T: Scalar> Tape<T> {
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.len() == 1 {
            return Ok(inputs[0]);
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = concat_channels_forward(&values)?;
        self.record(
            "concat_channels",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidArgument(format!(
                "channel slice {start}..{} of {c}",
                start + len
            )));
        }
        let mut value = split_channels(self.value(input), &[start, len, c - start - len]);
        let value = value.swap_remove(1);
        debug_assert_eq!(value.shape(), [n, len, h, w]);
        self.record("slice_channels", value, Op::SliceChannels { input, start }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.record("add", value, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.record("sub", value, Op::Sub { a, b }, &[a, b])
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let value = self.value(input).map(|x| x * factor);
        self.record("scale", value, Op::Scale { input, factor }, &[input])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::SeedableRng;

    #[test]
    fn single_input_is_identity() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::full(&[1, 2, 2, 2], 1.0));
        assert_eq!(tape.concat_channels(&[a]).unwrap(), a);
    }

    #[test]
    fn concat_shape_and_mismatch() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[1, 3, 8, 8]));
        let y = tape.concat_channels(&[a, a, a]).unwrap();
        assert_eq!(tape.shape(y), &[1, 9, 8, 8]);
        let bad = tape.constant(Tensor::zeros(&[1, 3, 8, 7]));
        assert!(matches!(tape.concat_channels(&[a, bad]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn concat_slice_round_trip_and_gradient_split() {
        let mut rng = Rng::seed_from_u64(11);
        let va = Tensor::<f64>::uniform(&[2, 2, 3, 3], -1.0, 1.0, &mut rng);
        let vb = Tensor::<f64>::uniform(&[2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let a = tape.param(va.clone());
        let b = tape.param(vb.clone());
        let cat = tape.concat_channels(&[a, b]).unwrap();
        let ra = tape.slice_channels(cat, 0, 2).unwrap();
        let rb = tape.slice_channels(cat, 2, 1).unwrap();
        assert_eq!(tape.value(ra), &va);
        assert_eq!(tape.value(rb), &vb);

        // d mean(cat^2) / d a = 2a / numel(cat)
        let loss = tape.mean_of_squares(cat).unwrap();
        tape.backward(loss).unwrap();
        let k = 2.0 / 54.0;
        assert_eq!(tape.grad(a).unwrap(), &va.map(|v| v * k));
        assert_eq!(tape.grad(b).unwrap(), &vb.map(|v| v * k));
    }

    #[test]
    fn add_sub_identities() {
        let mut rng = Rng::seed_from_u64(2);
        let va = Tensor::<f32>::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let vb = Tensor::<f32>::uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let mut tape = Tape::new();
        let a = tape.constant(va.clone());
        let b = tape.constant(vb);
        let z = tape.constant(Tensor::zeros(&[2, 3]));
        let s = tape.add(a, z).unwrap();
        assert_eq!(tape.value(s), &va);
        let d = tape.sub(a, a).unwrap();
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0));
        let ab = tape.add(a, b).unwrap();
        let back = tape.sub(ab, b).unwrap();
        for (x, y) in tape.value(back).data().iter().zip(va.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let wrong = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, wrong).is_err());
    }
}
