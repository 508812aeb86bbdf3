//! Long-term decay bounds.
//!
//! Summation by parts bounds the score magnitude by a content factor times
//! `sum_l |E_l|`, where `E_l = sum_{t<l} e^{i*rel*theta_t}`. The content-free
//! relative bound is the mean `(1/(d/2)) * sum_{l=1}^{d/2} |E_l|`. RoPE
//! evaluates it over the whole relative range; the chunked encoding only ever
//! sees within-chunk distances `0..c`, and the chunk factor has modulus one.

use num_complex::Complex64;
use serde::Serialize;

use crate::angles::AngleSchedule;
use crate::error::{Error, Result};

/// `|E_l|` for `l = 1..=d/2`.
pub fn partial_sums(rel: usize, schedule: &AngleSchedule) -> Vec<f64> {
    let rel = rel as f64;
    schedule
        .thetas()
        .iter()
        .scan(Complex64::new(0.0, 0.0), |acc, theta| {
            *acc += Complex64::cis(rel * theta);
            Some(acc.norm())
        })
        .collect()
}

/// Mean of `|E_l|` over `l = 1..=d/2`.
pub fn decay_bound(rel: usize, schedule: &AngleSchedule) -> f64 {
    partial_sums(rel, schedule).iter().sum::<f64>() / schedule.half() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCurve {
    pub d: usize,
    pub base: Option<f64>,
    pub chunk_size: Option<usize>,
    pub rel_distances: Vec<usize>,
    pub bounds: Vec<f64>,
}

/// RoPE bound for every relative distance in `0..=max_rel`.
pub fn decay_curve_rope(max_rel: usize, schedule: &AngleSchedule) -> DecayCurve {
    let rel_distances: Vec<usize> = (0..=max_rel).collect();
    DecayCurve {
        d: schedule.d(),
        base: schedule.base(),
        chunk_size: None,
        bounds: rel_distances
            .iter()
            .map(|&r| decay_bound(r, schedule))
            .collect(),
        rel_distances,
    }
}

/// Chunked bound: the same formula restricted to within-chunk distances `0..c`.
pub fn decay_curve_3d(chunk_size: usize, schedule: &AngleSchedule) -> Result<DecayCurve> {
    if chunk_size == 0 {
        return Err(Error::Parameter("chunk size must be at least 1".into()));
    }
    let rel_distances: Vec<usize> = (0..chunk_size).collect();
    Ok(DecayCurve {
        d: schedule.d(),
        base: schedule.base(),
        chunk_size: Some(chunk_size),
        bounds: rel_distances
            .iter()
            .map(|&r| decay_bound(r, schedule))
            .collect(),
        rel_distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfaceCell {
    pub rel: usize,
    pub chunk_delta: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecaySurface {
    pub d: usize,
    pub base: Option<f64>,
    pub chunk_size: usize,
    pub num_chunk_deltas: usize,
    /// Row-major over `(rel, chunk_delta)`.
    pub cells: Vec<SurfaceCell>,
}

impl DecaySurface {
    pub fn get(&self, rel: usize, chunk_delta: usize) -> Option<f64> {
        if rel >= self.chunk_size || chunk_delta >= self.num_chunk_deltas {
            return None;
        }
        Some(self.cells[rel * self.num_chunk_deltas + chunk_delta].bound)
    }
}

/// Bound over within-chunk distance and chunk distance. Constant along the
/// chunk axis since `|e^{i(phi_i - phi_j)}| = 1`.
pub fn decay_surface_3d(
    chunk_size: usize,
    num_chunk_deltas: usize,
    schedule: &AngleSchedule,
) -> Result<DecaySurface> {
    if num_chunk_deltas == 0 {
        return Err(Error::Parameter(
            "num_chunk_deltas must be at least 1".into(),
        ));
    }
    let curve = decay_curve_3d(chunk_size, schedule)?;
    let cells = curve
        .rel_distances
        .iter()
        .zip(&curve.bounds)
        .flat_map(|(&rel, &bound)| {
            (0..num_chunk_deltas).map(move |chunk_delta| SurfaceCell {
                rel,
                chunk_delta,
                bound,
            })
        })
        .collect();
    Ok(DecaySurface {
        d: schedule.d(),
        base: schedule.base(),
        chunk_size,
        num_chunk_deltas,
        cells,
    })
}

/// Means of consecutive, non-overlapping windows of `width` points.
pub fn window_means(values: &[f64], width: usize) -> Vec<f64> {
    values
        .chunks_exact(width.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}
