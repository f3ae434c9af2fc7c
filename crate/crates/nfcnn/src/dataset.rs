//! Image datasets on disk and the deterministic training batch stream.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use nfcnn_core::data::{synthesize_sample, to_unit, AugmentConfig};
use nfcnn_core::train::Batch;
use nfcnn_core::{rng_for, Scalar, Tensor};

use crate::image_io::{load_image_as, ImageError};

/// Manifest file picked up automatically inside a dataset directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("dataset {0} contains no images")]
    Empty(String),
    #[error("dataset {path} has no image of at least {patch}x{patch} pixels")]
    NoEligibleImage { path: String, patch: usize },
    #[error(transparent)]
    Core(#[from] nfcnn_core::Error),
}

/// Images of one dataset, all converted to the same channel count, in
/// listing order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub images: Vec<(PathBuf, Tensor<f32>)>,
}

impl Dataset {
    /// Opens a directory (sorted listing of PNG/PGM/PPM files, or its
    /// `manifest.txt` if present) or a manifest file directly. Manifest paths
    /// are relative to the manifest's directory; blank lines and lines
    /// starting with `#` are ignored.
    pub fn open(path: &Path, channels: usize) -> Result<Self, DatasetError> {
        let paths = list_images(path)?;
        if paths.is_empty() {
            return Err(DatasetError::Empty(path.display().to_string()));
        }
        let images = paths
            .into_iter()
            .map(|p| load_image_as(&p, channels).map(|img| (p, img)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Dataset {
            root: path.to_path_buf(),
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Image paths of a dataset directory or manifest file.
pub fn list_images(path: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if path.is_file() {
        return read_manifest(path);
    }
    let manifest = path.join(MANIFEST_NAME);
    if manifest.is_file() {
        return read_manifest(&manifest);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|entry| entry.map(|e| e.path()).map_err(io_err(path)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    out.sort();
    Ok(out)
}

fn read_manifest(manifest: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let text = fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Settings that shape each training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub batch_size: usize,
    pub patch: usize,
    pub sigma: f64,
    pub clip: bool,
    pub augment: AugmentConfig,
}

/// Infinite stream of training batches. Batch `k` is a pure function of
/// `(seed, k)`: images are drawn uniformly with replacement, then cropped,
/// flipped, blurred and corrupted with AWGN using `rng_for(seed, k)`.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    images: Vec<&'a Tensor<f32>>,
    config: StreamConfig,
    seed: u64,
    next: u64,
}

impl<'a> BatchStream<'a> {
    /// Images smaller than the patch are skipped.
    pub fn new(dataset: &'a Dataset, config: StreamConfig, seed: u64) -> Result<Self, DatasetError> {
        let p = config.patch;
        let images: Vec<&Tensor<f32>> = dataset
            .images
            .iter()
            .map(|(_, img)| img)
            .filter(|img| img.shape()[1] >= p && img.shape()[2] >= p)
            .collect();
        if images.is_empty() {
            return Err(DatasetError::NoEligibleImage {
                path: dataset.root.display().to_string(),
                patch: p,
            });
        }
        Ok(BatchStream {
            images,
            config,
            seed,
            next: 0,
        })
    }

    /// Number of images large enough for the patch size.
    pub fn eligible(&self) -> usize {
        self.images.len()
    }

    /// Continues the stream at batch `k`.
    pub fn seek(&mut self, k: u64) {
        self.next = k;
    }

    /// Batch `k` in pixel units `[0, 255]`, shaped `[B, C, P, P]`.
    pub fn pixel_batch(&self, k: u64) -> Result<Batch<f32>, DatasetError> {
        let mut rng = rng_for(self.seed, k);
        let mut noisy = Vec::with_capacity(self.config.batch_size);
        let mut clean = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let idx = rng.random_range(0..self.images.len());
            let pair = synthesize_sample(
                self.images[idx],
                self.config.patch,
                &self.config.augment,
                self.config.sigma,
                self.config.clip,
                &mut rng,
            )?;
            noisy.push(pair.noisy);
            clean.push(pair.clean);
        }
        Ok(Batch::new(Tensor::stack(&noisy)?, Tensor::stack(&clean)?)?)
    }

    /// Batch `k` scaled to the network range `[0, 1]`.
    pub fn batch<T: Scalar>(&self, k: u64) -> Result<Batch<T>, DatasetError> {
        let b = self.pixel_batch(k)?;
        Ok(Batch::new(to_unit(&b.noisy.cast()), to_unit(&b.clean.cast()))?)
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Batch<f32>, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = self.next;
        self.next += 1;
        Some(self.batch(k))
    }
}
