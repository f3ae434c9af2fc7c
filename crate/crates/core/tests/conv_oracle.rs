//! Convolution and replication padding against direct nested-loop
//! definitions.

use nfcnn_core::ops::pad::{replication_pad2d_backward, replication_pad2d_forward};
use nfcnn_core::{rng_for, Scalar, Tape, Tensor};
use proptest::prelude::*;
use rand::Rng as _;

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Size-preserving convolution written straight from the definition:
/// border pixels are read by clamping coordinates.
fn conv_oracle(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], b: &[f64]) -> Vec<f64> {
    let [n, cin, h, wd] = xs;
    let [cout, _, k, _] = ws;
    let p = (k as isize - 1) / 2;
    let mut out = vec![0.0; n * cout * h * wd];
    for s in 0..n {
        for o in 0..cout {
            for i in 0..h {
                for j in 0..wd {
                    let mut acc = b[o];
                    for c in 0..cin {
                        for u in 0..k {
                            for v in 0..k {
                                let yi = clamp_index(i as isize + u as isize - p, h);
                                let xj = clamp_index(j as isize + v as isize - p, wd);
                                acc += w[((o * cin + c) * k + u) * k + v] * x[((s * cin + c) * h + yi) * wd + xj];
                            }
                        }
                    }
                    out[((s * cout + o) * h + i) * wd + j] = acc;
                }
            }
        }
    }
    out
}

fn engine_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.param(w.clone());
    let bv = tape.param(b.clone());
    let k = w.shape()[2];
    let y = tape.conv2d(xv, wv, Some(bv), (k - 1) / 2).unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_matches_oracle_on_200_random_instances() {
    let mut rng = rng_for(2024, 0);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..=2);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        let xs = [n, cin, h, w];
        let ws = [cout, cin, k, k];
        let x = Tensor::<f64>::uniform(&xs, -1.0, 1.0, &mut rng);
        let wt = Tensor::<f64>::uniform(&ws, -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[cout], -1.0, 1.0, &mut rng);
        let want = conv_oracle(x.data(), xs, wt.data(), ws, b.data());

        let got64 = engine_conv(&x, &wt, &b);
        let got32 = engine_conv(&x.cast::<f32>(), &wt.cast::<f32>(), &b.cast::<f32>());
        assert_eq!(got64.shape(), &[n, cout, h, w]);
        for ((&a64, &a32), &o) in got64.data().iter().zip(got32.data()).zip(&want) {
            assert!((a64 - o).abs() <= 1e-12 * o.abs().max(1.0));
            let rel = (f64::from(a32) - o).abs() / o.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-5, "worst f32 relative error {worst}");
}

#[test]
fn conv_is_linear_in_input() {
    let mut rng = rng_for(7, 1);
    for _ in 0..20 {
        let xs = [2, 3, 6, 5];
        let a = Tensor::<f64>::uniform(&xs, -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&xs, -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::uniform(&[2, 3, 3, 3], -1.0, 1.0, &mut rng);
        let zero = Tensor::zeros(&[2]);
        let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mix = a.zip_map(&b, "mix", |p, q| s * p + t * q).unwrap();
        let lhs = engine_conv(&mix, &w, &zero);
        let (ya, yb) = (engine_conv(&a, &w, &zero), engine_conv(&b, &w, &zero));
        for ((&l, &p), &q) in lhs.data().iter().zip(ya.data()).zip(yb.data()) {
            assert!((l - (s * p + t * q)).abs() < 1e-12);
        }
    }
}

#[test]
fn identity_kernel_reproduces_input() {
    let mut rng = rng_for(3, 3);
    let x = Tensor::<f32>::uniform(&[1, 2, 5, 4], -1.0, 1.0, &mut rng);
    let mut w = Tensor::<f32>::zeros(&[2, 2, 3, 3]);
    w.data_mut()[4] = 1.0;
    w.data_mut()[(2 + 1) * 9 + 4] = 1.0;
    let y = engine_conv(&x, &w, &Tensor::zeros(&[2]));
    assert_eq!(y.data(), x.data());
}

#[test]
fn even_kernel_and_channel_mismatch_are_rejected() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let even = tape.param(Tensor::zeros(&[1, 2, 2, 2]));
    assert!(tape.conv2d(x, even, None, 0).is_err());
    let wrong_c = tape.param(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(tape.conv2d(x, wrong_c, None, 1).is_err());
}

/// Padding oracle: output pixel `(i, j)` copies input pixel
/// `(clamp(i - p), clamp(j - p))`.
fn pad_oracle(x: &[f64], n: usize, c: usize, h: usize, w: usize, p: usize) -> Vec<f64> {
    let (ho, wo) = (h + 2 * p, w + 2 * p);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        for i in 0..ho {
            for j in 0..wo {
                let yi = clamp_index(i as isize - p as isize, h);
                let xj = clamp_index(j as isize - p as isize, w);
                out.push(x[plane * h * w + yi * w + xj]);
            }
        }
    }
    out
}

#[test]
fn replication_pad_is_bit_exact_on_every_small_shape() {
    let mut rng = rng_for(11, 0);
    let mut cases = 0;
    for n in 1..=2 {
        for c in 1..=2 {
            for h in 1..=3 {
                for w in 1..=3 {
                    for p in 0..=2 {
                        // Distinct values make every source pixel identifiable.
                        let len = n * c * h * w;
                        let x: Vec<f64> = (0..len).map(|i| i as f64 + 0.5).collect();
                        let t = Tensor::from_vec(&[n, c, h, w], x.clone()).unwrap();
                        let y = replication_pad2d_forward(&t, p).unwrap();
                        assert_eq!(y.shape(), &[n, c, h + 2 * p, w + 2 * p]);
                        let want = pad_oracle(&x, n, c, h, w, p);
                        assert!(y.data().iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()));

                        // Adjoint: <pad(x), g> == <x, pad^T(g)>.
                        let g = Tensor::<f64>::uniform(y.shape(), -1.0, 1.0, &mut rng);
                        let back = replication_pad2d_backward(&g, t.shape(), p);
                        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                        let rhs: f64 = x.iter().zip(back.data()).map(|(a, b)| a * b).sum();
                        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 4 * 9 * 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn padding_preserves_interior(h in 1usize..6, w in 1usize..6, p in 0usize..3, seed in any::<u64>()) {
        let mut rng = rng_for(seed, 0);
        let x = Tensor::<f32>::uniform(&[1, 1, h, w], 0.0, 255.0, &mut rng);
        let y = replication_pad2d_forward(&x, p).unwrap();
        let wo = w + 2 * p;
        for i in 0..h {
            for j in 0..w {
                prop_assert_eq!(y.data()[(i + p) * wo + j + p], x.data()[i * w + j]);
            }
        }
    }

    #[test]
    fn conv_output_keeps_spatial_size(h in 1usize..9, w in 1usize..9, cin in 1usize..4, cout in 1usize..4) {
        let mut rng = rng_for((h * 31 + w) as u64, cin as u64);
        let x = Tensor::<f32>::uniform(&[1, cin, h, w], -1.0, 1.0, &mut rng);
        let wt = Tensor::<f32>::uniform(&[cout, cin, 3, 3], -1.0, 1.0, &mut rng);
        let y = engine_conv(&x, &wt, &Tensor::zeros(&[cout]));
        prop_assert_eq!(y.shape(), &[1, cout, h, w]);
    }
}
