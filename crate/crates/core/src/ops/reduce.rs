use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

pub fn mean_of_squares<T: Scalar>(input: &Tensor<T>) -> Result<T> {
    mean_by(input, |v| v * v)
}

pub fn mean_of_abs<T: Scalar>(input: &Tensor<T>) -> Result<T> {
    mean_by(input, |v| v.abs())
}

fn mean_by<T: Scalar>(input: &Tensor<T>, f: impl Fn(T) -> T) -> Result<T> {
    if input.numel() == 0 {
        return Err(Error::EmptyTensor);
    }
    let sum: T = input.data().iter().map(|&v| f(v)).sum();
    Ok(sum / T::from_usize(input.numel()).expect("numel fits"))
}

impl<T: Scalar> Tape<T> {
    pub fn mean_of_squares(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(mean_of_squares(self.value(input))?);
        self.record("mean_of_squares", value, Op::MeanSquares { input }, &[input])
    }

    pub fn mean_of_abs(&mut self, input: Var) -> Result<Var> {
        let value = Tensor::scalar(mean_of_abs(self.value(input))?);
        self.record("mean_of_abs", value, Op::MeanAbs { input }, &[input])
    }
}
