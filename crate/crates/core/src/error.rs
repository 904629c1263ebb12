use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("convolution output would be empty (input {input:?}, kernel {kernel:?}, stride {stride}, pad {pad})")]
    EmptyConvOutput { input: Vec<usize>, kernel: Vec<usize>, stride: usize, pad: usize },

    #[error("reduction over an empty tensor")]
    EmptyTensor,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape has already been differentiated; record a new pass")]
    TapeConsumed,

    #[error("parameter tables disagree on key {0:?}")]
    KeyMismatch(String),

    #[error("missing parameter {0:?}")]
    MissingParam(String),

    #[error("pixel value {0} outside [-1, 1]")]
    PixelRange(f32),

    #[error("mask has no missing pixels")]
    EmptyMask,

    #[error("mask coverage unachievable: {0}")]
    Coverage(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: u64 },

    #[error("invalid config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
