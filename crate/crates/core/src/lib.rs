//! Core of the noise-fusion CNN denoiser.
//!
//! Everything here is pure computation over owned buffers: a small
//! reverse-mode tensor engine, the branch and fusion blocks, multi-stage
//! model assembly, the stage-wise loss with Adam, synthetic AWGN data
//! generation and PSNR metrics. File formats, image decoding and the CLI
//! live in the `nfcnn` crate.
//!
//! The crate builds without `std` (it needs `alloc`); disable default
//! features to get the `no_std` build.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod blocks;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod session;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Deterministic generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Forward-pass phase. Dropout and batch statistics depend on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Train,
    Eval,
}

/// Builds the generator for stream `stream` under `seed`.
///
/// Distinct streams of one seed are independent, so batch `k` or step `k`
/// can be regenerated without replaying earlier draws.
pub fn rng_for(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
