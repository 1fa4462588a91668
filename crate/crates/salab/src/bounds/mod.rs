//! Closed-form bounds on `‖x_k − x*‖_c`: the almost-sure worst case, the
//! multiplicative- and additive-noise maximal concentration bounds with their
//! constant ledgers, fixed-time/tail forms, and the stepsize conditions.

mod add;
mod conditions;
mod mult;
mod worst_case;

pub use add::{build_add_ledger, AddInputs, AddLedger};
pub use conditions::{ConditionClause, ConditionReport};
pub use mult::{build_mult_ledger, MultInputs, MultLedger, Regime};
pub use worst_case::{worst_case_bound, WorstCase};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which statement produced a curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// Almost-sure worst case `B_k(D)²`.
    WorstCase,
    /// Multiplicative noise, `D = 0`.
    MultD0,
    /// Multiplicative noise, `D > 0`.
    MultDpos,
    /// Multiplicative noise, `D > 0`, log-product removed.
    MultPrime,
    /// Additive noise, `z = 1` (Markov + telescoping).
    AddZ1,
    /// Additive noise, `z < 1` (Markov + telescoping).
    AddZlt1,
    /// Additive noise via the supermartingale and Ville's inequality.
    AddVille,
    /// Multiplicative fixed-time bound (`K = k`).
    FixedTimeMult,
    /// Additive fixed-time bound.
    FixedTimeAdd,
    /// Q-learning maximal bound with the tabular constant `c_q`.
    QLearning,
}

impl BoundVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundVariant::WorstCase => "worst_case",
            BoundVariant::MultD0 => "mult_d0",
            BoundVariant::MultDpos => "mult_dpos",
            BoundVariant::MultPrime => "mult_prime",
            BoundVariant::AddZ1 => "add_z1",
            BoundVariant::AddZlt1 => "add_zlt1",
            BoundVariant::AddVille => "add_ville",
            BoundVariant::FixedTimeMult => "fixed_time_mult",
            BoundVariant::FixedTimeAdd => "fixed_time_add",
            BoundVariant::QLearning => "qlearning",
        }
    }
}

/// Bounds on `‖x_k − x*‖_c²` at the steps `ks`, holding jointly for all
/// `k ≥ k_anchor` with probability `1 − delta` (pointwise for fixed-time
/// variants, almost surely for the worst case).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub ks: Vec<usize>,
    pub values: Vec<f64>,
    pub delta: f64,
    pub k_anchor: usize,
    pub variant: BoundVariant,
}

impl BoundCurve {
    /// Builds a curve from a per-step evaluator.
    pub fn from_fn<F: Fn(usize) -> f64>(
        ks: impl IntoIterator<Item = usize>,
        delta: f64,
        k_anchor: usize,
        variant: BoundVariant,
        f: F,
    ) -> Self {
        let ks: Vec<usize> = ks.into_iter().collect();
        let values = ks.iter().map(|&k| f(k)).collect();
        BoundCurve { ks, values, delta, k_anchor, variant }
    }

    /// Value at step `k`, if the curve covers it.
    pub fn value_at(&self, k: usize) -> Option<f64> {
        // ks is usually the contiguous range k_anchor..=k_max
        if let Some(&k0) = self.ks.first() {
            if let Some(i) = k.checked_sub(k0) {
                if self.ks.get(i) == Some(&k) {
                    return Some(self.values[i]);
                }
            }
        }
        self.ks.iter().position(|&j| j == k).map(|i| self.values[i])
    }

    /// A constant curve; handy for audits and tests.
    pub fn constant(ks: impl IntoIterator<Item = usize>, value: f64, k_anchor: usize) -> Self {
        Self::from_fn(ks, 0.0, k_anchor, BoundVariant::WorstCase, |_| value)
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delta must lie in (0,1), got {delta}")))
    }
}

pub(crate) fn check_range(ks: &[usize], k_anchor: usize) -> Result<()> {
    match ks.iter().find(|&&k| k < k_anchor) {
        Some(k) => Err(Error::InvalidParameter(format!("k = {k} precedes the anchor K = {k_anchor}"))),
        None => Ok(()),
    }
}

/// Smallest `k` (as a real, rounded up) with `f(k) ≤ target`, assuming `f`
/// eventually decreases to 0: doubling until the target is met on the
/// decreasing branch, then bisection.
pub(crate) fn first_crossing<F: Fn(f64) -> f64>(f: F, target: f64) -> Result<f64> {
    const K_CAP: f64 = 1e300;
    let mut hi = 1.0;
    while !(f(hi) <= target && f(2.0 * hi) <= f(hi)) {
        hi *= 2.0;
        if hi > K_CAP || !f(hi).is_finite() && hi > 1e12 {
            return Err(Error::Unattainable(format!("bound stays above {target:e} up to k = {hi:e}")));
        }
    }
    let mut lo = (hi / 2.0).floor();
    if f(lo) <= target {
        lo = 0.0;
        if f(0.0) <= target {
            return Ok(0.0);
        }
    }
    // f(lo) > target ≥ f(hi)
    while hi - lo > 1.0 && (hi - lo) > 1e-12 * hi {
        let mid = ((lo + hi) / 2.0).floor();
        if f(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
