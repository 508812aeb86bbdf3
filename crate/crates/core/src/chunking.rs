//! Chunked position layout.
//!
//! A flat position `p` in a sequence of length `L` splits into a chunk index
//! `j = p / c` and a within-chunk index `m = p % c`. The last chunk may be
//! partial; its within-chunk indices still start at 0.

use serde::Serialize;

use crate::error::{Error, Result};

/// Number of chunks needed to cover `seq_len` tokens, `ceil(seq_len / chunk_size)`.
pub fn chunk_count(seq_len: usize, chunk_size: usize) -> Result<usize> {
    if seq_len == 0 || chunk_size == 0 {
        return Err(Error::Parameter(format!(
            "sequence length and chunk size must be positive (got {seq_len}, {chunk_size})"
        )));
    }
    Ok(seq_len.div_ceil(chunk_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkLayout {
    seq_len: usize,
    chunk_size: usize,
    num_chunks: usize,
}

impl ChunkLayout {
    pub fn new(seq_len: usize, chunk_size: usize) -> Result<Self> {
        let num_chunks = chunk_count(seq_len, chunk_size)?;
        Ok(Self {
            seq_len,
            chunk_size,
            num_chunks,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    /// Number of tokens held by chunk `j`; only the last chunk can be short.
    pub fn occupancy(&self, j: usize) -> usize {
        if j + 1 < self.num_chunks {
            self.chunk_size
        } else if j + 1 == self.num_chunks {
            self.seq_len - j * self.chunk_size
        } else {
            0
        }
    }

    /// Splits position `p` into `(chunk index, within-chunk index)`.
    pub fn decompose(&self, p: usize) -> Result<(usize, usize)> {
        if p >= self.seq_len {
            return Err(Error::OutOfRange {
                position: p,
                seq_len: self.seq_len,
            });
        }
        Ok((p / self.chunk_size, p % self.chunk_size))
    }

    /// Relative coordinates between a query at `p` and a key at `key`.
    pub fn relative(&self, p: usize, key: usize) -> Result<RelPos> {
        let (i, m) = self.decompose(p)?;
        let (j, n) = self.decompose(key)?;
        Ok(RelPos {
            chunk_delta: i as i64 - j as i64,
            token_delta: m as i64 - n as i64,
        })
    }
}

/// The pair of relative coordinates a chunked score depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct RelPos {
    pub chunk_delta: i64,
    pub token_delta: i64,
}

impl RelPos {
    pub fn negate(self) -> Self {
        Self {
            chunk_delta: -self.chunk_delta,
            token_delta: -self.token_delta,
        }
    }
}

impl std::fmt::Display for RelPos {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.chunk_delta, self.token_delta)
    }
}

/// Row `p`, column `p'` holds the relative position of query `p` to key `p'`.
pub fn relative_position_matrix(layout: &ChunkLayout) -> Vec<Vec<RelPos>> {
    let c = layout.chunk_size() as i64;
    (0..layout.seq_len() as i64)
        .map(|p| {
            (0..layout.seq_len() as i64)
                .map(|k| RelPos {
                    chunk_delta: p / c - k / c,
                    token_delta: p % c - k % c,
                })
                .collect()
        })
        .collect()
}
