use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {field}: {message}")]
    Parse {
        line: usize,
        field: &'static str,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown item `{0}`")]
    UnknownItem(String),

    #[error("hash bucket {index} out of range for table with {buckets} rows")]
    BucketOutOfRange { index: usize, buckets: usize },

    #[error("all node degrees are zero, sampling distribution is undefined")]
    ZeroDegrees,

    #[error("no valid negative for head {head} after {attempts} attempts")]
    NegativeSamplingExhausted { head: u32, attempts: usize },

    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("corrupt {what}: {message}")]
    Corrupt { what: &'static str, message: String },

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("no eligible users after filtering")]
    NoEligibleUsers,

    #[error("embedding table is degenerate (rank 0)")]
    Degenerate,

    #[error(transparent)]
    Io(#[from] io::Error),
}
