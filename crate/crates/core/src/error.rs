use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("input contains no interactions")]
    EmptyGraph,
    #[error("split infeasible: {0}")]
    SplitInfeasible(String),
    #[error("sparsify infeasible: kept {kept} of {target} target edges; no droppable edge remains")]
    SparsifyInfeasible { kept: usize, target: usize },
    #[error("insufficient negatives for user {user}: need {needed}, candidate pool has {available}")]
    InsufficientNegatives {
        user: u32,
        needed: usize,
        available: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluation protocol error: {0}")]
    Protocol(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Tensor(#[from] adapt_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, Error>;
