//! Dense tensor math with reverse-mode automatic differentiation, AdamW, and
//! the warmup learning-rate schedule.
//!
//! Everything is single-threaded and uses a fixed reduction order, so a
//! given sequence of calls produces bitwise-identical results.

pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{lr_at, AdamW, Moments};
pub use params::{Gradients, Param, ParamGroup, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite input to {op}")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },
    #[error("target id {target} outside vocabulary of {vocab}")]
    TargetOutOfRange { target: usize, vocab: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("axis {axis} out of range for {ndim}-d tensor")]
    BadAxis { axis: usize, ndim: usize },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("trainable parameter {0:?} has no gradient")]
    MissingGrad(String),
    #[error("backward called on an inference tape")]
    GradDisabled,
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
