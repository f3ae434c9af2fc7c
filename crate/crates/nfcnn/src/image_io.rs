//! 8-bit raster IO (PNG and PGM/PPM) to and from `[C, H, W]` tensors holding
//! pixel intensities in `[0, 255]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use nfcnn_core::data::quantize_pixel;
use nfcnn_core::{Scalar, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("cannot read image {path}: {source}")]
    Read { path: String, source: image::ImageError },
    #[error("cannot write image {path}: {source}")]
    Write { path: String, source: image::ImageError },
    #[error("unsupported pixel format {format} in {path}; expected 8-bit grayscale or RGB")]
    UnsupportedFormat { path: String, format: String },
    #[error("image tensor must have shape [1|3, H, W], got {0:?}")]
    BadShape(Vec<usize>),
    #[error("{path}: image has {got} channels, expected {expected}")]
    ChannelMismatch { path: String, expected: usize, got: usize },
}

/// Loads an 8-bit grayscale or RGB image. An alpha channel, if present, is
/// dropped; 16-bit and float images are rejected.
pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>, ImageError> {
    let img = image::open(path).map_err(|source| ImageError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let (channels, bytes, w, h) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.as_raw().clone(), g.width(), g.height()),
        DynamicImage::ImageLumaA8(_) => {
            let g = img.to_luma8();
            (1, g.as_raw().clone(), g.width(), g.height())
        }
        DynamicImage::ImageRgb8(c) => (3, c.as_raw().clone(), c.width(), c.height()),
        DynamicImage::ImageRgba8(_) => {
            let c = img.to_rgb8();
            (3, c.as_raw().clone(), c.width(), c.height())
        }
        other => {
            return Err(ImageError::UnsupportedFormat {
                path: path.display().to_string(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    Ok(interleaved_to_tensor(&bytes, channels, h as usize, w as usize))
}

/// Loads an image and converts it to `channels` channels: RGB to gray uses
/// BT.601 luma weights, gray to RGB replicates the plane.
pub fn load_image_as<T: Scalar>(path: &Path, channels: usize) -> Result<Tensor<T>, ImageError> {
    let img: Tensor<T> = load_image(path)?;
    let have = img.shape()[0];
    if have == channels {
        return Ok(img);
    }
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let data = img.data();
    let out = match (have, channels) {
        (3, 1) => (0..plane)
            .map(|i| {
                let y = 0.299 * data[i].as_f64() + 0.587 * data[plane + i].as_f64() + 0.114 * data[2 * plane + i].as_f64();
                T::from_f64_lossy(f64::from(quantize_pixel(y)))
            })
            .collect(),
        (1, 3) => data.iter().chain(data).chain(data).copied().collect(),
        _ => {
            return Err(ImageError::ChannelMismatch {
                path: path.display().to_string(),
                expected: channels,
                got: have,
            })
        }
    };
    Ok(Tensor::from_vec(&[channels, h, w], out).expect("plane sizes agree"))
}

/// Outcome of an encode: how many values fell outside `[0, 255]` and were
/// clamped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SaveStats {
    pub clamped: usize,
}

/// Rounds half away from zero, clamps to `[0, 255]` and writes an 8-bit image.
/// The format follows the extension (`.png`, `.pgm`, `.ppm`, `.pnm`).
pub fn save_image<T: Scalar>(tensor: &Tensor<T>, path: &Path) -> Result<SaveStats, ImageError> {
    let (bytes, stats) = encode_pixels(tensor)?;
    let shape = tensor.shape();
    let (c, h, w) = (shape[0], shape[1] as u32, shape[2] as u32);
    let img = if c == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized from shape"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized from shape"))
    };
    let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Png);
    img.save_with_format(path, format).map_err(|source| ImageError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(stats)
}

/// 8-bit interleaved encoding of a `[C, H, W]` tensor.
pub fn encode_pixels<T: Scalar>(tensor: &Tensor<T>) -> Result<(Vec<u8>, SaveStats), ImageError> {
    let shape = tensor.shape();
    if shape.len() != 3 || !matches!(shape[0], 1 | 3) {
        return Err(ImageError::BadShape(shape.to_vec()));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let data = tensor.data();
    let mut stats = SaveStats::default();
    let mut bytes = Vec::with_capacity(data.len());
    for i in 0..plane {
        for ch in 0..c {
            let v = data[ch * plane + i].as_f64();
            if v.round() < 0.0 || v.round() > 255.0 {
                stats.clamped += 1;
            }
            bytes.push(quantize_pixel(v));
        }
    }
    Ok((bytes, stats))
}

/// The tensor an image would hold after an encode/decode round trip.
pub fn quantized<T: Scalar>(tensor: &Tensor<T>) -> Tensor<T> {
    tensor.map(|v| T::from_f64_lossy(f64::from(quantize_pixel(v.as_f64()))))
}

fn interleaved_to_tensor<T: Scalar>(bytes: &[u8], channels: usize, h: usize, w: usize) -> Tensor<T> {
    let plane = h * w;
    let mut data = vec![T::zero(); channels * plane];
    for i in 0..plane {
        for ch in 0..channels {
            data[ch * plane + i] = T::from_f64_lossy(f64::from(bytes[i * channels + ch]));
        }
    }
    Tensor::from_vec(&[channels, h, w], data).expect("buffer sized from shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_rounds_and_clamps() {
        let t = Tensor::<f32>::from_vec(&[1, 1, 4], vec![255.4, -3.0, 127.5, 12.49]).unwrap();
        let (bytes, stats) = encode_pixels(&t).unwrap();
        assert_eq!(bytes, vec![255, 0, 128, 12]);
        assert_eq!(stats.clamped, 1);
    }

    #[test]
    fn encode_interleaves_color() {
        let t = Tensor::<f32>::from_vec(&[3, 1, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(encode_pixels(&t).unwrap().0, vec![1, 3, 5, 2, 4, 6]);
    }

    #[test]
    fn rejects_bad_shapes() {
        let t = Tensor::<f32>::zeros(&[2, 2, 2]);
        assert!(matches!(encode_pixels(&t), Err(ImageError::BadShape(_))));
    }
}
