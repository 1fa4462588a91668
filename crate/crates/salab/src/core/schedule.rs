use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomially decaying stepsizes `α_k = alpha / (k + h)^z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub alpha: f64,
    pub h: f64,
    pub z: f64,
}

impl StepSchedule {
    pub fn new(alpha: f64, h: f64, z: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if !(h >= 1.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("h must be >= 1, got {h}")));
        }
        if !(z > 0.0 && z <= 1.0) {
            return Err(Error::InvalidParameter(format!("z must lie in (0, 1], got {z}")));
        }
        Ok(StepSchedule { alpha, h, z })
    }

    /// `α / (k + h)` — the common `z = 1` case.
    pub fn harmonic(alpha: f64, h: f64) -> Result<Self> {
        Self::new(alpha, h, 1.0)
    }

    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        stepsize_at(self, k)
    }

    /// `α_0`.
    pub fn alpha0(&self) -> f64 {
        self.at(0)
    }

    /// `Σ_{i<k} α_i`.
    pub fn partial_sum(&self, k: usize) -> f64 {
        (0..k).map(|i| self.at(i)).sum()
    }
}

#[inline]
pub fn stepsize_at(s: &StepSchedule, k: usize) -> f64 {
    let t = k as f64 + s.h;
    if s.z == 1.0 {
        s.alpha / t
    } else {
        s.alpha / t.powf(s.z)
    }
}
