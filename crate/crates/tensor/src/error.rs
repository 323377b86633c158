use thiserror::Error;

/// Errors raised by tape operations and the optimizer.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: (usize, usize),
    },
    #[error("backward: loss must be a 1x1 scalar, got shape {got:?}")]
    NonScalarLoss { got: (usize, usize) },
    #[error("adam: parameter {index} has no gradient")]
    UninitializedGrad { index: usize },
    #[error("adam: parameter {index} has {values} values but gradient has {grads}")]
    GradSizeMismatch {
        index: usize,
        values: usize,
        grads: usize,
    },
    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;
