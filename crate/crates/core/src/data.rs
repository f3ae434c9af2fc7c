//! Synthetic training data: cropping, flips, blur and AWGN.
//!
//! Images are `[C, H, W]` tensors holding 8-bit intensities as reals in
//! `[0, 255]`. Synthesized pairs are snapped to a 2^-12 grid so that
//! `noisy - clean` and `clean + noise` are both exact in `f32`.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng as _, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PIXEL_MAX: f64 = 255.0;

const GRID: f64 = 4096.0;

/// Additive white Gaussian noise description.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Standard deviation in pixel units.
    pub sigma: f64,
    /// Clamp the noisy image to `[0, 255]`.
    pub clip: bool,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma: 25.0,
            clip: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T> {
    pub clean: Tensor<T>,
    pub noisy: Tensor<T>,
    /// Always `noisy - clean`, including after clipping.
    pub noise: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip: bool,
    pub blur_prob: f64,
    /// Blur sigma is drawn uniformly from this range.
    pub blur_sigma: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            blur_prob: 0.2,
            blur_sigma: (0.5, 1.5),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            blur_prob: 0.0,
            blur_sigma: (0.5, 1.5),
        }
    }
}

fn dims3<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::InvalidShape {
            op: "image",
            msg: alloc::format!("expected [C,H,W], got {s:?}"),
        }),
    }
}

fn snap<T: Scalar>(v: T) -> T {
    T::from_f64_lossy((v.as_f64() * GRID).round() / GRID)
}

/// Crops a `patch x patch` window at a uniformly random corner.
pub fn random_crop<T: Scalar>(image: &Tensor<T>, patch: usize, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    let (_, h, w) = dims3(image)?;
    if h < patch || w < patch {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            patch,
        });
    }
    let top = rng.random_range(0..=h - patch);
    let left = rng.random_range(0..=w - patch);
    crop(image, top, left, patch, patch)
}

pub fn crop<T: Scalar>(image: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image)?;
    if top + height > h || left + width > w {
        return Err(Error::InvalidArgument("crop window outside image".into()));
    }
    let mut data = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in top..top + height {
            let row = (ch * h + y) * w;
            data.extend_from_slice(&image.data()[row + left..row + left + width]);
        }
    }
    Tensor::from_vec(&[c, height, width], data)
}

/// Axis reversals. Together with composition they form the Klein
/// four-group; `Both` is a 180 degree rotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipMode {
    None,
    Horizontal,
    Vertical,
    Both,
}

impl FlipMode {
    pub const ALL: [FlipMode; 4] = [FlipMode::None, FlipMode::Horizontal, FlipMode::Vertical, FlipMode::Both];

    fn bits(self) -> u8 {
        match self {
            FlipMode::None => 0,
            FlipMode::Horizontal => 1,
            FlipMode::Vertical => 2,
            FlipMode::Both => 3,
        }
    }

    /// Mode equivalent to applying `self` then `other`.
    pub fn compose(self, other: FlipMode) -> FlipMode {
        FlipMode::ALL[(self.bits() ^ other.bits()) as usize]
    }

    pub fn random(rng: &mut dyn RngCore) -> FlipMode {
        FlipMode::ALL[rng.random_range(0..4)]
    }
}

pub fn augment_flip<T: Scalar>(image: &Tensor<T>, mode: FlipMode) -> Result<Tensor<T>> {
    let (c, h, w) = dims3(image)?;
    let (flip_x, flip_y) = match mode {
        FlipMode::None => return Ok(image.clone()),
        FlipMode::Horizontal => (true, false),
        FlipMode::Vertical => (false, true),
        FlipMode::Both => (true, true),
    };
    let src = image.data();
    let mut data = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            let sy = if flip_y { h - 1 - y } else { y };
            let row = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
            if flip_x {
                data.extend(row.iter().rev());
            } else {
                data.extend_from_slice(row);
            }
        }
    }
    Tensor::from_vec(image.shape(), data)
}

/// Normalized Gaussian weights on `[-r, r]`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur<T: Scalar>(image: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument("blur sigma must be positive".into()));
    }
    let (c, h, w) = dims3(image)?;
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let src: Vec<f64> = image.data().iter().map(|v| v.as_f64()).collect();
    let mut tmp = vec![0.0f64; src.len()];
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                tmp[row + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kw)| kw * src[row + clamp(x as isize + k as isize - r, w)])
                    .sum();
            }
        }
    }
    let mut out = Vec::with_capacity(src.len());
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kw)| kw * tmp[(ch * h + clamp(y as isize + k as isize - r, h)) * w + x])
                    .sum();
                out.push(T::from_f64_lossy(v));
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Blurs with `probability`, otherwise returns the image unchanged.
pub fn augment_blur<T: Scalar>(image: &Tensor<T>, sigma: f64, probability: f64, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    if rng.random::<f64>() < probability {
        gaussian_blur(image, sigma)
    } else {
        Ok(image.clone())
    }
}

/// Adds a given perturbation field: `noisy = clean + field`, clamped when
/// `clip`, with the stored noise recomputed as `noisy - clean`.
pub fn add_noise_field<T: Scalar>(clean: &Tensor<T>, field: &[f64], clip: bool) -> Result<SamplePair<T>> {
    if field.len() != clean.numel() {
        return Err(Error::InvalidArgument("noise field size differs from image".into()));
    }
    let clean = clean.map(snap);
    let noisy: Vec<T> = clean
        .data()
        .iter()
        .zip(field)
        .map(|(&x, &g)| {
            let y = x.as_f64() + g;
            let y = if clip { y.clamp(0.0, PIXEL_MAX) } else { y };
            snap(T::from_f64_lossy(y))
        })
        .collect();
    let noisy = Tensor::from_vec(clean.shape(), noisy)?;
    let noise = noisy.zip_map(&clean, "add_noise", |y, x| y - x)?;
    Ok(SamplePair { clean, noisy, noise })
}

pub fn add_awgn_with<T: Scalar>(clean: &Tensor<T>, sigma: f64, clip: bool, rng: &mut dyn RngCore) -> Result<SamplePair<T>> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
    }
    let field: Vec<f64> = (0..clean.numel())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect();
    add_noise_field(clean, &field, clip)
}

/// AWGN synthesis seeded by `spec.seed`.
pub fn add_awgn<T: Scalar>(clean: &Tensor<T>, spec: &NoiseSpec) -> Result<SamplePair<T>> {
    add_awgn_with(clean, spec.sigma, spec.clip, &mut crate::rng_for(spec.seed, 0))
}

/// Crop, flip, blur, then AWGN: one training sample.
pub fn synthesize_sample<T: Scalar>(
    image: &Tensor<T>,
    patch: usize,
    augment: &AugmentConfig,
    sigma: f64,
    clip: bool,
    rng: &mut dyn RngCore,
) -> Result<SamplePair<T>> {
    let mut x = random_crop(image, patch, rng)?;
    if augment.flip {
        x = augment_flip(&x, FlipMode::random(rng))?;
    }
    if augment.blur_prob > 0.0 {
        let (lo, hi) = augment.blur_sigma;
        let s = lo + (hi - lo) * rng.random::<f64>();
        x = augment_blur(&x, s, augment.blur_prob, rng)?;
    }
    add_awgn_with(&x, sigma, clip, rng)
}

/// 8-bit encoding: round half away from zero, then clamp to `[0, 255]`.
pub fn quantize_pixel(v: f64) -> u8 {
    v.round().clamp(0.0, PIXEL_MAX) as u8
}

/// Maps pixel intensities to the network's `[0, 1]` range.
pub fn to_unit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let k = T::from_f64_lossy(1.0 / PIXEL_MAX);
    t.map(|v| v * k)
}

pub fn from_unit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let k = T::from_f64_lossy(PIXEL_MAX);
    t.map(|v| v * k)
}
