use thiserror::Error;

/// Errors produced by the encoding kernels and the analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("position {position} out of range for sequence length {seq_len}")]
    OutOfRange { position: usize, seq_len: usize },

    #[error("chunk index {index} out of range for {num_chunks} chunk(s)")]
    ChunkIndex { index: usize, num_chunks: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    Mismatch { left: usize, right: usize },

    #[error(
        "infeasible rechunk: new chunk size {new_chunk_size} exceeds pre-trained length {pretrain_len}"
    )]
    InfeasibleRechunk {
        new_chunk_size: usize,
        pretrain_len: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T> = std::result::Result<T, Error>;
