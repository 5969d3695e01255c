use thiserror::Error;

/// Errors produced by scoring, losses, indexing and corpus generation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has norm {norm:e}, too small to normalize")]
    ZeroNormRow { row: usize, norm: f64 },

    #[error("every entry is masked")]
    AllMasked,

    #[error("column {column} is constant across the batch")]
    DegenerateColumn { column: usize },

    #[error("level {level} has a zero vector")]
    DegenerateLevel { level: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dimension mismatch: query has {query}, index has {index}")]
    DimMismatch { query: usize, index: usize },

    #[error("score matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },

    #[error("assignment mismatch: {0}")]
    AssignmentMismatch(String),

    #[error("invalid token matrix: {0}")]
    InvalidTokens(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("retrieval result for query {query} has no ground-truth rank")]
    MissingTruth { query: u32 },

    #[error("mechanism {0} is not supported by this index")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
