use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the almost-sure bound `‖x_k − x*‖_c ≤ B_k(D)` under
/// `α_k = α/(k+h)`, with `D = σ + γ_c − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub gamma_c: f64,
    pub sigma: f64,
    /// `‖x₀ − x*‖_c`
    pub x0_err: f64,
    /// `‖x*‖_c`
    pub xstar_norm: f64,
    pub alpha: f64,
    pub h: f64,
}

/// `|D|` below this counts as `D = 0`.
pub const D_ZERO_TOL: f64 = 1e-12;

impl WorstCase {
    pub fn new(gamma_c: f64, sigma: f64, x0_err: f64, xstar_norm: f64, alpha: f64, h: f64) -> Result<Self> {
        let wc = WorstCase { gamma_c, sigma, x0_err, xstar_norm, alpha, h };
        if !(sigma >= 0.0 && x0_err >= 0.0 && xstar_norm >= 0.0 && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid worst-case parameters {wc:?}")));
        }
        if wc.d() >= -D_ZERO_TOL && !(h > 1.0) {
            return Err(Error::InvalidParameter(format!("h must exceed 1 when D >= 0 (h = {h})")));
        }
        Ok(wc)
    }

    pub fn d(&self) -> f64 {
        self.sigma + self.gamma_c - 1.0
    }

    /// `B_k(D)`.
    pub fn at(&self, k: usize) -> f64 {
        let d = self.d();
        let a = self.sigma * (1.0 + self.xstar_norm);
        if d.abs() <= D_ZERO_TOL {
            self.x0_err + a * self.alpha * self.log_ratio(k)
        } else if d > 0.0 {
            (self.alpha * d * self.log_ratio(k)).exp() * (self.x0_err + a / d) - a / d
        } else {
            self.x0_err - a / d
        }
    }

    /// `log((k−1+h)/(h−1))`.
    fn log_ratio(&self, k: usize) -> f64 {
        ((k as f64 - 1.0 + self.h) / (self.h - 1.0)).ln()
    }
}

pub fn worst_case_bound(wc: &WorstCase, k: usize) -> f64 {
    wc.at(k)
}
