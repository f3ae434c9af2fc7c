//! 2-D cross-correlation (no kernel flip) lowered to GEMM via im2col.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

/// Gradients of a valid convolution.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

fn kernel_dims<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>) -> Result<(usize, usize)> {
    let (_, cin, _, _) = input.dims4("conv2d")?;
    let (cout, wcin, kh, kw) = weight.dims4("conv2d")?;
    if wcin != cin {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: wcin,
            got: cin,
        });
    }
    if kh != kw {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!("kernel must be square, got {kh}x{kw}"),
        });
    }
    if kh % 2 == 0 {
        return Err(Error::EvenKernel(kh));
    }
    Ok((cout, kh))
}

/// Unfolds one `[cin, h, w]` plane stack into `[cin*k*k, ho*wo]` columns.
fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let src = &plane[(oy + ky) * w + kx..][..wo];
                    row[oy * wo..(oy + 1) * wo].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let p = ho * wo;
    for ci in 0..cin {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                for oy in 0..ho {
                    let dst = &mut plane[(oy + ky) * w + kx..][..wo];
                    for (d, &s) in dst.iter_mut().zip(&row[oy * wo..(oy + 1) * wo]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Unpadded convolution: output spatial size is `(h-k+1, w-k+1)`.
pub fn conv2d_valid_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = input.dims4("conv2d")?;
    let (cout, k) = kernel_dims(input, weight)?;
    if h < k || w < k {
        return Err(Error::InvalidShape {
            op: "conv2d",
            msg: format!("input {h}x{w} smaller than kernel {k}"),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![cout],
            });
        }
    }
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let p = ho * wo;
    let kk = cin * k * k;
    let mut cols = vec![T::zero(); kk * p];
    let mut out = vec![T::zero(); n * cout * p];
    for (sample, dst) in out.chunks_exact_mut(cout * p).enumerate() {
        im2col(&input.data()[sample * cin * h * w..], cin, h, w, k, &mut cols);
        T::gemm(cout, kk, p, weight.data(), (kk as isize, 1), &cols, (p as isize, 1), dst, false);
        if let Some(b) = bias {
            for (row, &bv) in dst.chunks_exact_mut(p).zip(b.data()) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_vec(&[n, cout, ho, wo], out)
}

pub fn conv2d_valid_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
) -> ConvGrads<T> {
    let s = input.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let ws = weight.shape();
    let (cout, k) = (ws[0], ws[2]);
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let p = ho * wo;
    let kk = cin * k * k;

    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = vec![T::zero(); kk * p];
    let mut dweight = vec![T::zero(); cout * kk];
    let mut dbias = vec![T::zero(); cout];
    let mut dinput = want_input.then(|| vec![T::zero(); n * cin * h * w]);

    for sample in 0..n {
        let g = &grad.data()[sample * cout * p..(sample + 1) * cout * p];
        for (db, row) in dbias.iter_mut().zip(g.chunks_exact(p)) {
            *db += row.iter().copied().sum::<T>();
        }
        im2col(&input.data()[sample * cin * h * w..], cin, h, w, k, &mut cols);
        T::gemm(cout, p, kk, g, (p as isize, 1), &cols, (1, p as isize), &mut dweight, sample > 0);
        if let Some(dx) = dinput.as_mut() {
            T::gemm(kk, cout, p, weight.data(), (1, kk as isize), g, (p as isize, 1), &mut dcols, false);
            col2im(&dcols, cin, h, w, k, &mut dx[sample * cin * h * w..]);
        }
    }
    ConvGrads {
        input: dinput.map(|d| Tensor::from_vec(s, d).expect("input shape")),
        weight: Tensor::from_vec(ws, dweight).expect("weight shape"),
        bias: Tensor::from_vec(&[cout], dbias).expect("bias shape"),
    }
}

impl<T: Scalar> Tape<T> {
    /// Size-preserving convolution: replication padding of `(k-1)/2` followed
    /// by a valid cross-correlation.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let (_, k) = kernel_dims(self.value(input), self.value(weight))?;
        if pad != (k - 1) / 2 {
            return Err(Error::InvalidArgument(format!(
                "pad {pad} does not preserve size for kernel {k}"
            )));
        }
        let padded = if pad > 0 {
            self.replication_pad2d(input, pad)?
        } else {
            input
        };
        let value = conv2d_valid_forward(self.value(padded), self.value(weight), bias.map(|b| self.value(b)))?;
        let mut inputs: Vec<Var> = vec![padded, weight];
        inputs.extend(bias);
        self.record(
            "conv2d",
            value,
            Op::Conv {
                input: padded,
                weight,
                bias,
            },
            &inputs,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::SeedableRng;

    #[test]
    fn one_by_one_is_scalar_affine() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap());
        let w = tape.param(Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let b = tape.param(Tensor::from_vec(&[1], vec![0.5]).unwrap());
        let y = tape.conv2d(x, w, Some(b), 0).unwrap();
        assert_eq!(tape.value(y).data(), &[6.5]);
    }

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut rng = Rng::seed_from_u64(3);
        let input = Tensor::<f32>::uniform(&[2, 1, 5, 7], -1.0, 1.0, &mut rng);
        let mut kernel = vec![0.0f32; 9];
        kernel[4] = 1.0;
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let w = tape.constant(Tensor::from_vec(&[1, 1, 3, 3], kernel).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, Some(b), 1).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn rejects_bad_kernels_and_channels() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let even = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
        assert_eq!(tape.conv2d(x, even, None, 1), Err(Error::EvenKernel(2)));
        let wrong_c = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(matches!(
            tape.conv2d(x, wrong_c, None, 1),
            Err(Error::ChannelMismatch { .. })
        ));
        let ok = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(matches!(tape.conv2d(x, ok, None, 0), Err(Error::InvalidArgument(_))));
    }
}
