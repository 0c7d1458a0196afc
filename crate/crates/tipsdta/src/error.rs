//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (relative asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("block {block} is numerically singular")]
    SingularBlock { block: usize },

    #[error("singular matrix: {context}")]
    SingularMatrix { context: String },

    #[error("demixing update is singular at bin {bin}, source {source_index}")]
    SingularDemix { bin: usize, source_index: usize },

    #[error("invalid frequency partition: {reason}")]
    InvalidPartition { reason: String },

    #[error("degenerate basis (k={basis}, n={source_index}): {reason}")]
    DegenerateBasis {
        basis: usize,
        source_index: usize,
        reason: String,
    },

    #[error("degenerate basis update (k={basis}, n={source_index}): inner matrix stayed singular after ridge")]
    DegenerateUpdate { basis: usize, source_index: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("input too short: {len} samples, need at least {window}")]
    InputTooShort { len: usize, window: usize },

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedFormat(String),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cost became non-finite at iteration {iteration}")]
    InvalidCost { iteration: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
