use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },
    #[error("{op}: channel mismatch, expected {expected} got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("kernel size {0} is not odd")]
    EvenKernel(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("batch norm running statistics are uninitialized")]
    UninitializedStatistics,
    #[error("reduction over an empty tensor")]
    EmptyTensor,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is detached from the tape")]
    DetachedLoss,
    #[error("missing gradient for parameter {0}")]
    MissingGradient(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("empty stage output list")]
    NoStages,
    #[error("image {height}x{width} is smaller than patch {patch}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        patch: usize,
    },
}
