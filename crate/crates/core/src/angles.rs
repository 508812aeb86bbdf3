//! Rotary frequency schedules.
//!
//! Two schedules drive the encoding: the per-pair token frequencies
//! `theta[l] = base^(-2l/d)` and the per-chunk phases `phi[j] = base^(-j)`.
//! Both are immutable; transforms return new values.

use crate::error::{Error, Result};

/// Default base constant for both schedules.
pub const DEFAULT_BASE: f64 = 10_000.0;

/// Per-dimension rotary frequencies for a head of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleSchedule {
    d: usize,
    base: Option<f64>,
    thetas: Vec<f64>,
}

impl AngleSchedule {
    /// Builds a schedule from explicit frequencies. `d` is `2 * thetas.len()`.
    ///
    /// Used for synthetic schedules in tests and analysis; no base is recorded.
    pub fn from_thetas(thetas: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::Dimension(
                "schedule needs at least one frequency".into(),
            ));
        }
        if let Some(bad) = thetas.iter().find(|t| !t.is_finite()) {
            return Err(Error::NonFinite(format!("theta {bad}")));
        }
        Ok(Self {
            d: 2 * thetas.len(),
            base: None,
            thetas,
        })
    }

    /// Head dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of rotary pairs, `d / 2`.
    pub fn half(&self) -> usize {
        self.thetas.len()
    }

    /// Base the schedule was generated from, if any.
    pub fn base(&self) -> Option<f64> {
        self.base
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }
}

/// Per-chunk phase angles `phi[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkAngles {
    base: Option<f64>,
    phis: Vec<f64>,
}

impl ChunkAngles {
    /// Builds chunk phases from explicit values (synthetic schedules).
    pub fn from_phis(phis: Vec<f64>) -> Result<Self> {
        if phis.is_empty() {
            return Err(Error::Parameter(
                "at least one chunk phase is required".into(),
            ));
        }
        if let Some(bad) = phis.iter().find(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("phi {bad}")));
        }
        Ok(Self { base: None, phis })
    }

    pub fn num_chunks(&self) -> usize {
        self.phis.len()
    }

    pub fn base(&self) -> Option<f64> {
        self.base
    }

    pub fn phis(&self) -> &[f64] {
        &self.phis
    }

    /// Phase of chunk `j`.
    pub fn phi(&self, j: usize) -> Result<f64> {
        self.phis.get(j).copied().ok_or(Error::ChunkIndex {
            index: j,
            num_chunks: self.phis.len(),
        })
    }
}

fn check_base(base: f64) -> Result<()> {
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::Parameter(format!(
            "base must be positive and finite, got {base}"
        )));
    }
    Ok(())
}

/// `thetas[l] = base^(-2l/d)` for `l in 0..d/2`.
pub fn theta_schedule(d: usize, base: f64) -> Result<AngleSchedule> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "head dimension must be even and positive, got {d}"
        )));
    }
    check_base(base)?;
    let thetas = (0..d / 2)
        .map(|l| base.powf(-2.0 * l as f64 / d as f64))
        .collect();
    Ok(AngleSchedule {
        d,
        base: Some(base),
        thetas,
    })
}

/// `phis[j] = base^(-j)` for `j in 0..num_chunks`.
pub fn phi_schedule(num_chunks: usize, base: f64) -> Result<ChunkAngles> {
    if num_chunks == 0 {
        return Err(Error::Parameter("num_chunks must be at least 1".into()));
    }
    check_base(base)?;
    let phis = (0..num_chunks).map(|j| base.powi(-(j as i32))).collect();
    Ok(ChunkAngles {
        base: Some(base),
        phis,
    })
}

/// Multiplies every frequency by `factor` (linear position interpolation).
pub fn scale_thetas(schedule: &AngleSchedule, factor: f64) -> Result<AngleSchedule> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(Error::Parameter(format!(
            "scale factor must lie in (0, 1], got {factor}"
        )));
    }
    Ok(AngleSchedule {
        d: schedule.d,
        base: schedule.base,
        thetas: schedule.thetas.iter().map(|t| t * factor).collect(),
    })
}
