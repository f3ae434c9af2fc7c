//! Differentiable operations recorded on a [`Tape`](crate::Tape).
//!
//! Each submodule holds the plain forward/backward kernels plus the
//! `Tape` method that records the op.

pub mod activation;
pub mod batch_norm;
pub mod conv;
pub mod pad;
pub mod reduce;
pub mod structural;

pub use activation::DropoutMode;
pub use batch_norm::{BatchNormConfig, BatchStats, RunningStats};
