//! Position interpolation and positional resolution.
//!
//! Linear interpolation squeezes a target length `L` into a pre-trained
//! window `L_p` by scaling every frequency by `L_p / L`, so adjacent tokens
//! are only `L_p / L` index units apart. The chunked scheme instead keeps
//! `n = ceil(L_p / c)` chunks and grows each to `c' = ceil(L / n)` slots:
//! adjacent tokens inside a chunk stay one index apart as long as `c' <= L_p`.

use serde::Serialize;

use crate::angles::{scale_thetas, AngleSchedule, ChunkAngles};
use crate::chunking::chunk_count;
use crate::error::{Error, Result};

/// Smallest new chunk size for which the resolution guarantee applies.
pub const MIN_NEW_CHUNK_SIZE: usize = 3;

fn check_lengths(pretrain_len: usize, target_len: usize) -> Result<()> {
    if pretrain_len == 0 {
        return Err(Error::Parameter(
            "pre-trained length must be positive".into(),
        ));
    }
    if target_len < pretrain_len {
        return Err(Error::Parameter(format!(
            "target length {target_len} is shorter than pre-trained length {pretrain_len}"
        )));
    }
    Ok(())
}

/// `(scale factor, resolution)` of linear interpolation, both `L_p / L`.
pub fn linear_pi_rope(pretrain_len: usize, target_len: usize) -> Result<(f64, f64)> {
    check_lengths(pretrain_len, target_len)?;
    let scale = pretrain_len as f64 / target_len as f64;
    Ok((scale, scale))
}

/// Frequencies after linear interpolation from `pretrain_len` to `target_len`.
pub fn interpolate_schedule(
    schedule: &AngleSchedule,
    pretrain_len: usize,
    target_len: usize,
) -> Result<AngleSchedule> {
    let (scale, _) = linear_pi_rope(pretrain_len, target_len)?;
    scale_thetas(schedule, scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rechunk {
    pub num_chunks: usize,
    pub new_chunk_size: usize,
}

/// Spreads the extra `L - L_p` tokens across the `ceil(L_p / c)` chunks.
pub fn rechunk_3d(pretrain_len: usize, target_len: usize, chunk_size: usize) -> Result<Rechunk> {
    check_lengths(pretrain_len, target_len)?;
    let num_chunks = chunk_count(pretrain_len, chunk_size)?;
    let new_chunk_size = target_len.div_ceil(num_chunks);
    if new_chunk_size > pretrain_len {
        return Err(Error::InfeasibleRechunk {
            new_chunk_size,
            pretrain_len,
        });
    }
    Ok(Rechunk {
        num_chunks,
        new_chunk_size,
    })
}

/// One `(L, c)` configuration of the resolution comparison.
///
/// Serializes to a flat record. `resolution_3d` and `boundary_resolution`
/// are `None` when the rechunk is infeasible; `boundary_resolution` is also
/// `None` when there is a single chunk and hence no chunk boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolutionReport {
    pub pretrain_len: usize,
    pub target_len: usize,
    pub chunk_size: usize,
    pub num_chunks: usize,
    pub new_chunk_size: usize,
    pub resolution_rope_pi: f64,
    pub resolution_3d: Option<f64>,
    pub boundary_resolution: Option<f64>,
    pub theorem_holds: bool,
    pub feasible: bool,
}

impl ResolutionReport {
    /// No extension: both resolutions are 1 and the strict comparison cannot hold.
    pub fn is_degenerate(&self) -> bool {
        self.target_len == self.pretrain_len
    }

    /// Whether `c' >= 3`, the precondition of the resolution guarantee.
    pub fn meets_chunk_precondition(&self) -> bool {
        self.new_chunk_size >= MIN_NEW_CHUNK_SIZE
    }

    /// Whether the guarantee applies to this record at all.
    pub fn guarantee_applies(&self) -> bool {
        self.feasible && !self.is_degenerate() && self.meets_chunk_precondition()
    }
}

/// Resolution comparison for one `(L_p, L, c)` configuration.
///
/// Same-chunk neighbours keep an index spacing of exactly 1. At a chunk
/// boundary, the last slot `c' - 1` of chunk `i` and the first slot of chunk
/// `i + 1` are `c' - 1 + (phi_{i+1} - phi_i) / theta_0` rotation units apart;
/// this is evaluated at `i = 0`, where the phase gap is widest.
pub fn resolution_3d(
    pretrain_len: usize,
    target_len: usize,
    chunk_size: usize,
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<ResolutionReport> {
    let (_, resolution_rope_pi) = linear_pi_rope(pretrain_len, target_len)?;
    let Rechunk {
        num_chunks,
        new_chunk_size,
    } = rechunk_3d(pretrain_len, target_len, chunk_size)?;
    let resolution = 1.0;
    let boundary_resolution = if num_chunks > 1 {
        let theta = schedule.thetas()[0];
        Some(new_chunk_size as f64 - 1.0 + (phis.phi(1)? - phis.phi(0)?) / theta)
    } else {
        None
    };
    Ok(ResolutionReport {
        pretrain_len,
        target_len,
        chunk_size,
        num_chunks,
        new_chunk_size,
        resolution_rope_pi,
        resolution_3d: Some(resolution),
        boundary_resolution,
        theorem_holds: resolution > resolution_rope_pi,
        feasible: true,
    })
}

/// Evaluates every `(L, c)` pair. Infeasible pairs yield a record with
/// `feasible == false` instead of an error.
pub fn theorem1_grid_check(
    pretrain_len: usize,
    target_lens: &[usize],
    chunk_sizes: &[usize],
    schedule: &AngleSchedule,
    phis: &ChunkAngles,
) -> Result<Vec<ResolutionReport>> {
    let mut reports = Vec::with_capacity(target_lens.len() * chunk_sizes.len());
    for &target_len in target_lens {
        for &chunk_size in chunk_sizes {
            match resolution_3d(pretrain_len, target_len, chunk_size, schedule, phis) {
                Ok(r) => reports.push(r),
                Err(Error::InfeasibleRechunk { new_chunk_size, .. }) => {
                    let num_chunks = chunk_count(pretrain_len, chunk_size)?;
                    reports.push(ResolutionReport {
                        pretrain_len,
                        target_len,
                        chunk_size,
                        num_chunks,
                        new_chunk_size,
                        resolution_rope_pi: pretrain_len as f64 / target_len as f64,
                        resolution_3d: None,
                        boundary_resolution: None,
                        theorem_holds: false,
                        feasible: false,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(reports)
}
