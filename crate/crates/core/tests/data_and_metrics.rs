//! Noise synthesis statistics, augmentation invariants and PSNR numerics.

use nfcnn_core::data::{
    add_awgn, add_awgn_with, add_noise_field, augment_blur, augment_flip, gaussian_blur, gaussian_kernel,
    random_crop, synthesize_sample, AugmentConfig, FlipMode, NoiseSpec,
};
use nfcnn_core::metrics::{mse, psnr, psnr_from_mse, MetricReport};
use nfcnn_core::{rng_for, Tensor};
use proptest::prelude::*;

fn constant(value: f32, c: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::full(&[c, h, w], value)
}

fn ramp(c: usize, h: usize, w: usize) -> Tensor<f32> {
    let data = (0..c * h * w).map(|i| ((i * 37) % 256) as f32).collect();
    Tensor::from_vec(&[c, h, w], data).unwrap()
}

#[test]
fn awgn_moments_on_mid_gray() {
    let clean = constant(128.0, 1, 400, 400);
    let pair = add_awgn(&clean, &NoiseSpec { sigma: 25.0, clip: false, seed: 3 }).unwrap();
    let n = pair.noise.numel() as f64;
    let values: Vec<f64> = pair.noise.data().iter().map(|&v| f64::from(v)).collect();
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 3.0 * 25.0 / n.sqrt(), "mean {mean}");
    assert!((std - 25.0).abs() < 0.25, "std {std}");
}

#[test]
fn noise_identity_is_bitwise_exact() {
    for clip in [true, false] {
        let clean = ramp(3, 31, 17);
        let pair = add_awgn(&clean, &NoiseSpec { sigma: 50.0, clip, seed: 9 }).unwrap();
        for ((&y, &x), &n) in pair.noisy.data().iter().zip(pair.clean.data()).zip(pair.noise.data()) {
            assert_eq!((y - x).to_bits(), n.to_bits());
            assert_eq!((x + n).to_bits(), y.to_bits());
        }
    }
}

#[test]
fn clipping_keeps_range_and_its_absence_leaves_it() {
    let clean = Tensor::from_vec(&[1, 100, 100], (0..10_000).map(|i| if i % 2 == 0 { 0.0 } else { 255.0 }).collect()).unwrap();
    let clipped = add_awgn(&clean, &NoiseSpec { sigma: 25.0, clip: true, seed: 1 }).unwrap();
    assert!(clipped.noisy.data().iter().all(|v| (0.0..=255.0).contains(v)));
    let raw = add_awgn(&clean, &NoiseSpec { sigma: 25.0, clip: false, seed: 1 }).unwrap();
    assert!(raw.noisy.data().iter().any(|v| *v < 0.0));
    assert!(raw.noisy.data().iter().any(|v| *v > 255.0));
}

#[test]
fn clamp_then_difference() {
    let clean = Tensor::from_vec(&[1, 1, 2], vec![250.0f32, 3.0]).unwrap();
    let pair = add_noise_field(&clean, &[20.0, -10.0], true).unwrap();
    assert_eq!(pair.noisy.data(), &[255.0, 0.0]);
    assert_eq!(pair.noise.data(), &[5.0, -3.0]);
}

#[test]
fn zero_sigma_is_identity_and_seeds_are_reproducible() {
    let clean = ramp(1, 9, 9);
    let pair = add_awgn(&clean, &NoiseSpec { sigma: 0.0, clip: true, seed: 4 }).unwrap();
    assert_eq!(pair.noisy, clean);
    assert!(pair.noise.data().iter().all(|v| *v == 0.0));
    let spec = NoiseSpec { sigma: 15.0, clip: true, seed: 4 };
    assert_eq!(add_awgn(&clean, &spec).unwrap(), add_awgn(&clean, &spec).unwrap());
    assert!(add_awgn_with(&clean, -1.0, true, &mut rng_for(0, 0)).is_err());
}

#[test]
fn flips_form_the_klein_four_group() {
    let img = ramp(2, 3, 5);
    for a in FlipMode::ALL {
        for b in FlipMode::ALL {
            let twice = augment_flip(&augment_flip(&img, a).unwrap(), b).unwrap();
            let composed = a.compose(b);
            assert!(FlipMode::ALL.contains(&composed));
            assert_eq!(twice, augment_flip(&img, composed).unwrap());
        }
        assert_eq!(augment_flip(&augment_flip(&img, a).unwrap(), a).unwrap(), img);
    }
    let distinct: Vec<Tensor<f32>> = FlipMode::ALL.iter().map(|&m| augment_flip(&img, m).unwrap()).collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(distinct[i], distinct[j]);
        }
    }
}

#[test]
fn blur_kernel_matches_direct_gaussian() {
    let mut img = Tensor::<f64>::zeros(&[1, 15, 15]);
    img.data_mut()[7 * 15 + 7] = 1.0;
    let out = gaussian_blur(&img, 1.0).unwrap();
    let radius = 3i32;
    let norm: f64 = (-radius..=radius).map(|d| (-(d * d) as f64 / 2.0).exp()).sum();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let want = (-(dy * dy) as f64 / 2.0).exp() * (-(dx * dx) as f64 / 2.0).exp() / (norm * norm);
            let got = out.data()[((7 + dy) * 15 + 7 + dx) as usize];
            assert!((got - want).abs() < 1e-6);
        }
    }
    assert_eq!(gaussian_kernel(1.0).len(), 7);
    assert_eq!(gaussian_kernel(0.5).len(), 5);
}

#[test]
fn blur_preserves_constants_and_probability_zero_is_identity() {
    let img = constant(77.0, 3, 8, 6);
    let out = gaussian_blur(&img, 1.3).unwrap();
    assert!(out.data().iter().all(|v| (v - 77.0).abs() < 1e-4));
    let r = ramp(1, 8, 8);
    assert_eq!(augment_blur(&r, 1.0, 0.0, &mut rng_for(0, 0)).unwrap(), r);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn augmentation_preserves_shape_and_range(seed in any::<u64>(), h in 8usize..20, w in 8usize..20, patch in 1usize..8, color in any::<bool>()) {
        let c = if color { 3 } else { 1 };
        let img = ramp(c, h, w);
        let mut rng = rng_for(seed, 0);
        let crop = random_crop(&img, patch, &mut rng).unwrap();
        prop_assert_eq!(crop.shape(), &[c, patch, patch]);
        let aug = AugmentConfig { blur_prob: 1.0, ..AugmentConfig::default() };
        let pair = synthesize_sample(&img, patch, &aug, 25.0, true, &mut rng).unwrap();
        prop_assert_eq!(pair.clean.shape(), &[c, patch, patch]);
        prop_assert!(pair.clean.data().iter().all(|v| (0.0..=255.0).contains(v)));
        prop_assert!(pair.noisy.data().iter().all(|v| (0.0..=255.0).contains(v)));
    }

    #[test]
    fn psnr_is_symmetric_and_permutation_invariant(seed in any::<u64>()) {
        let mut rng = rng_for(seed, 1);
        let a = Tensor::<f64>::uniform(&[1, 4, 4], 0.0, 255.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[1, 4, 4], 0.0, 255.0, &mut rng);
        prop_assert_eq!(psnr(&a, &b, 255.0).unwrap(), psnr(&b, &a, 255.0).unwrap());
        let perm: Vec<usize> = (0..16).map(|i| (i * 5 + 3) % 16).collect();
        let shuffle = |t: &Tensor<f64>| Tensor::from_vec(&[1, 4, 4], perm.iter().map(|&i| t.data()[i]).collect()).unwrap();
        let p1 = psnr(&a, &b, 255.0).unwrap();
        let p2 = psnr(&shuffle(&a), &shuffle(&b), 255.0).unwrap();
        prop_assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_mse(m1 in 1e-6f64..1e5, m2 in 1e-6f64..1e5) {
        prop_assume!(m1 < m2);
        prop_assert!(psnr_from_mse(m1, 255.0) > psnr_from_mse(m2, 255.0));
    }
}

#[test]
fn psnr_reference_values() {
    let a = constant(100.0, 1, 8, 8);
    let b = constant(101.0, 1, 8, 8);
    assert!((psnr(&a, &b, 255.0).unwrap() - 48.1308).abs() < 1e-3);
    assert!((psnr_from_mse(100.0, 255.0) - 28.1308).abs() < 1e-3);
    assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
    let d = Tensor::<f64>::from_vec(&[2], vec![3.0, -4.0]).unwrap();
    assert_eq!(mse(&d, &Tensor::zeros(&[2])).unwrap(), 12.5);
    assert!(mse(&a, &constant(0.0, 1, 8, 7)).is_err());
}

#[test]
fn awgn_baseline_psnr() {
    // Mid-gray keeps every pixel far from the clamp, so the noisy-vs-clean
    // PSNR approaches 20 log10(255 / 25).
    let clean = constant(128.0, 1, 512, 512);
    let pair = add_awgn(&clean, &NoiseSpec { sigma: 25.0, clip: false, seed: 5 }).unwrap();
    let got = psnr(&pair.noisy, &clean, 255.0).unwrap();
    let want = 20.0 * (255.0f64 / 25.0).log10();
    assert!((got - want).abs() < 0.1, "{got} vs {want}");
}

#[test]
fn report_mean_is_arithmetic_mean_of_rows() {
    let mut r = MetricReport::default();
    for m in [1.0, 10.0, 100.0] {
        r.push("img", m, 255.0);
    }
    let want = r.rows.iter().map(|x| x.psnr).sum::<f64>() / 3.0;
    assert_eq!(r.mean_psnr(), Some(want));
    assert_eq!(MetricReport::default().mean_psnr(), None);
}
