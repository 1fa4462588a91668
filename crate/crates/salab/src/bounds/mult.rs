//! Multiplicative noise: `‖F(x,Y) − F̄(x)‖_c ≤ σ(1 + ‖x‖_c)` with
//! `α_k = α/(k+h)`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use super::conditions::{ConditionClause, ConditionReport};
use super::worst_case::{WorstCase, D_ZERO_TOL};
use super::{check_delta, check_range, first_crossing, BoundCurve, BoundVariant};
use crate::core::StepSchedule;
use crate::error::{Error, Result};
use crate::moreau::MoreauConfig;

/// Sign of `D = σ + γ_c − 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Positive,
    Zero,
    /// The iterates are a.s. bounded and the noise is effectively additive;
    /// the multiplicative concentration bounds do not apply.
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultInputs {
    pub gamma_c: f64,
    pub sigma: f64,
    /// `‖x₀ − x*‖_c`, must be positive.
    pub x0_err: f64,
    /// `‖x*‖_c`
    pub xstar_norm: f64,
    pub moreau: MoreauConfig,
    pub alpha: f64,
    /// `None` picks the smallest `h` meeting the stepsize condition.
    pub h: Option<f64>,
}

/// Every derived constant of the multiplicative analysis for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultLedger {
    pub gamma_c: f64,
    /// σ as supplied.
    pub sigma: f64,
    /// σ′ ≥ σ actually used, making `2αD` an integer when `D > 0`.
    pub sigma_used: f64,
    pub d: f64,
    pub regime: Regime,
    pub l_cm: f64,
    pub u_cm: f64,
    pub gamma_tilde: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
    pub theta: f64,
    /// `2αD + 1` (`D > 0` only).
    pub m: Option<u32>,
    pub c1: Option<f64>,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c1_prime: f64,
    pub c1_double_prime: Option<f64>,
    /// The supremum entering `c₁″`.
    pub c5: Option<f64>,
    pub moreau: MoreauConfig,
    pub schedule: StepSchedule,
    pub x0_err: f64,
    pub xstar_norm: f64,
    pub conditions: ConditionReport,
}

/// Smallest `h` admitted by the automatic choice.
pub const H_FLOOR: f64 = 1.0 + 1e-6;

pub fn build_mult_ledger(inp: &MultInputs) -> Result<MultLedger> {
    let MultInputs { gamma_c, sigma, x0_err, xstar_norm, alpha, .. } = *inp;
    if !(gamma_c >= 0.0 && gamma_c < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_c must lie in [0,1), got {gamma_c}")));
    }
    if !(sigma > 0.0) || !(x0_err > 0.0) || !(xstar_norm >= 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma > 0, x0_err > 0, xstar_norm >= 0, alpha > 0 (got {sigma}, {x0_err}, {xstar_norm}, {alpha})"
        )));
    }

    let d_raw = sigma + gamma_c - 1.0;
    let (sigma_used, d, regime, m) = if d_raw.abs() <= D_ZERO_TOL {
        (sigma, 0.0, Regime::Zero, None)
    } else if d_raw < 0.0 {
        (sigma, d_raw, Regime::Negative, None)
    } else {
        let two_ad = 2.0 * alpha * d_raw;
        let n = two_ad.round();
        if (two_ad - n).abs() <= 1e-9 * two_ad.max(1.0) && n >= 1.0 {
            (sigma, d_raw, Regime::Positive, Some(n as u32 + 1))
        } else {
            let n = two_ad.ceil();
            let d = n / (2.0 * alpha);
            (1.0 - gamma_c + d, d, Regime::Positive, Some(n as u32 + 1))
        }
    };

    let cfg = &inp.moreau;
    let mc = cfg.constants(gamma_c);
    let (l_cm, u_cm) = (mc.l_cm, mc.u_cm);
    let s1 = 1.0 + xstar_norm;
    let d0 = 2.0 * (1.0 - mc.gamma_tilde);
    let d1 = 4.0 * sigma_used * sigma_used / (l_cm * l_cm);
    let d2 = 2.0 * cfg.l_smooth * (2.0 + sigma_used).powi(2) * u_cm * u_cm / (cfg.mu * cfg.l_cs * cfg.l_cs);
    let theta = d0 * x0_err * x0_err / (8.0 * d1 * (s1 * s1 + x0_err * x0_err));
    let d3 = d0 * d2 / (4.0 * d1);
    let d4 = s1 * s1 / (x0_err * x0_err);

    let step_cap = 1f64.min(d0).min(d0 / (4.0 * d2));
    let h = match inp.h {
        Some(h) => h,
        None => super::add::nudge_h(alpha, (alpha / step_cap).max(H_FLOOR), 1.0, step_cap),
    };
    let schedule = StepSchedule::new(alpha, h, 1.0)?;
    let alpha0 = schedule.alpha0();

    let c2 = d0 / (16.0 * alpha0 * d1 * l_cm * l_cm);
    let c3 = 8.0 * alpha * E * d2 * d4 / (alpha * d0 - 2.0);
    let c4 = alpha * d3;
    let c1_prime = 32.0 * u_cm * u_cm * d1 * (1.0 + sigma_used * d4 * alpha * alpha) * (d4 + 1.0) / d0;

    let (c1, c5, c1_double_prime) = match m {
        Some(m) => {
            let mf = m as f64;
            let noise = 1.0 + sigma_used * sigma_used * d4 / (d * d);
            let base = d1.ln() + (1.0 + d4).ln() + 2.0 * u_cm.ln() - d0.ln();
            let c1 = (mf * (32f64.ln() + base)).exp() * noise;
            let c5 = sup_c5(alpha, h, c2 + c3, c4, mf);
            let c1pp = ((mf + 1.0) * (64f64.ln() + base)).exp() * noise * (1.0 + c5);
            (Some(c1), Some(c5), Some(c1pp))
        }
        None => (None, None, None),
    };

    let mut conditions = ConditionReport::default();
    conditions.clauses.push(ConditionClause::new("D >= 0", d, ">=", 0.0, true));
    conditions.clauses.push(ConditionClause::new("alpha > 2/D0", alpha, ">", 2.0 / d0, true));
    conditions.clauses.push(ConditionClause::new("h > 1", h, ">", 1.0, true));
    conditions.clauses.push(ConditionClause::new("alpha0 <= min(1, D0, D0/(4 D2))", alpha0, "<=", step_cap, true));
    conditions.clauses.push(ConditionClause::new("gamma_tilde < 1", mc.gamma_tilde, "<", 1.0, true));

    Ok(MultLedger {
        gamma_c,
        sigma,
        sigma_used,
        d,
        regime,
        l_cm,
        u_cm,
        gamma_tilde: mc.gamma_tilde,
        d0,
        d1,
        d2,
        d3,
        d4,
        theta,
        m,
        c1,
        c2,
        c3,
        c4,
        c1_prime,
        c1_double_prime,
        c5,
        moreau: cfg.clone(),
        schedule,
        x0_err,
        xstar_norm,
        conditions,
    })
}

/// `sup_{k ≥ 0} α/(k+h) · (a + c₄ log((k−1+h)/(h−1)))^m` over integer `k`.
///
/// The supremand is unimodal in `k`: a doubling scan brackets the peak, a
/// golden-section search refines it on the continuous relaxation, and the
/// two neighbouring integers are compared.
fn sup_c5(alpha: f64, h: f64, a: f64, c4: f64, m: f64) -> f64 {
    let g = |k: f64| alpha.ln() - (k + h).ln() + m * (a + c4 * ((k - 1.0 + h) / (h - 1.0)).ln()).ln();
    let mut best_k = 0.0;
    let mut best = g(0.0);
    let mut k = 1.0;
    loop {
        let v = g(k);
        if v > best {
            best = v;
            best_k = k;
        } else if k > 2.0 * best_k.max(1.0) {
            break;
        }
        k *= 2.0;
        if k > 1e300 {
            break;
        }
    }
    let (mut lo, mut hi) = ((best_k / 2.0).max(0.0), (best_k * 2.0).max(1.0));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - phi * (hi - lo);
        let x2 = lo + phi * (hi - lo);
        if g(x1) < g(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
        if hi - lo < 0.5 {
            break;
        }
    }
    let centre = ((lo + hi) / 2.0).floor();
    for cand in [centre - 1.0, centre, centre + 1.0, centre + 2.0] {
        if cand >= 0.0 {
            best = best.max(g(cand));
        }
    }
    best.exp()
}

impl MultLedger {
    pub fn alpha(&self) -> f64 {
        self.schedule.alpha
    }

    pub fn h(&self) -> f64 {
        self.schedule.h
    }

    /// Almost-sure bound with the ledger's σ′.
    pub fn worst_case(&self) -> Result<WorstCase> {
        WorstCase::new(self.gamma_c, self.sigma_used, self.x0_err, self.xstar_norm, self.alpha(), self.h())
    }

    /// `λ_k = θ / (α_k B_k(D)²)`.
    pub fn lambda(&self, k: usize) -> Result<f64> {
        let b = self.worst_case()?.at(k);
        Ok(self.theta / (self.schedule.at(k) * b * b))
    }

    fn lr(&self, k: f64, from: f64) -> f64 {
        let h = self.h();
        ((k - 1.0 + h) / (from - 1.0 + h)).ln()
    }

    fn k_decay(&self, k_anchor: f64) -> f64 {
        let h = self.h();
        (h / (k_anchor + h)).powf(self.alpha() * self.d0 / 2.0 - 1.0)
    }

    fn require(&self, want: Regime) -> Result<()> {
        if self.regime == want {
            Ok(())
        } else {
            Err(Error::RegimeMismatch(format!("bound needs regime {want:?}, instance has D = {} ({:?})", self.d, self.regime)))
        }
    }

    /// `D > 0` maximal bound at step `k ≥ K`.
    pub fn mult_dpos(&self, delta: f64, k_anchor: f64, k: f64) -> Result<f64> {
        self.require(Regime::Positive)?;
        let m = self.m.unwrap() as f64;
        let c1 = self.c1.unwrap();
        let l = (m / delta).ln();
        let (alpha, h) = (self.alpha(), self.h());
        let first = l + self.c2 + self.c3 + self.c4 * self.lr(k, 0.0);
        let second = l + self.c2 * self.k_decay(k_anchor) + self.c3 + self.c4 * self.lr(k, k_anchor);
        Ok(c1 * alpha * self.x0_err.powi(2) / (k + h) * first.powf(m - 1.0) * second)
    }

    /// `D = 0` maximal bound at step `k ≥ K`. Vanishes at `k = 0` because of
    /// its squared-log factor.
    pub fn mult_d0(&self, delta: f64, k_anchor: f64, k: f64) -> Result<f64> {
        self.require(Regime::Zero)?;
        let (alpha, h) = (self.alpha(), self.h());
        let lg = self.lr(k, 0.0);
        let second = (1.0 / delta).ln() + self.c2 * self.k_decay(k_anchor) + self.c3 + self.c4 * self.lr(k, k_anchor);
        Ok(self.c1_prime * alpha * self.x0_err.powi(2) / (k + h) * lg * lg * second)
    }

    /// `D > 0` bound without the log product, at the price of a heavier tail.
    pub fn mult_prime(&self, delta: f64, k_anchor: f64, k: f64) -> Result<f64> {
        self.require(Regime::Positive)?;
        let m = self.m.unwrap() as f64;
        let l = ((m + 1.0) / delta).ln();
        let alpha_k = self.alpha() / (k + self.h());
        let second = l + self.c2 * self.k_decay(k_anchor) + self.c3 + self.c4 * self.lr(k, k_anchor);
        Ok(self.c1_double_prime.unwrap() * alpha_k * self.x0_err.powi(2) * (l.powf(m) + 1.0) * second)
    }

    /// Fixed-time bound at step `k` (the `D > 0` bound with `K = k`, with its
    /// last bracket relaxed to the first).
    pub fn fixed_time(&self, delta: f64, k: f64) -> Result<f64> {
        self.require(Regime::Positive)?;
        let m = self.m.unwrap() as f64;
        let (base, b) = self.fixed_time_parts(k);
        Ok(base * ((m / delta).ln() + b).powf(m))
    }

    /// `(c₁αe₀²/(k+h), c₂ + c₃ + c₄ log((k−1+h)/(h−1)))`.
    fn fixed_time_parts(&self, k: f64) -> (f64, f64) {
        let base = self.c1.unwrap() * self.alpha() * self.x0_err.powi(2) / (k + self.h());
        (base, self.c2 + self.c3 + self.c4 * self.lr(k, 0.0))
    }

    /// One bound value; no condition check.
    pub fn value(&self, variant: BoundVariant, delta: f64, k_anchor: usize, k: usize) -> Result<f64> {
        let (ka, kf) = (k_anchor as f64, k as f64);
        match variant {
            BoundVariant::WorstCase => Ok(self.worst_case()?.at(k).powi(2)),
            BoundVariant::MultD0 => self.mult_d0(delta, ka, kf),
            BoundVariant::MultDpos => self.mult_dpos(delta, ka, kf),
            BoundVariant::MultPrime => self.mult_prime(delta, ka, kf),
            BoundVariant::FixedTimeMult => self.fixed_time(delta, kf),
            other => Err(Error::RegimeMismatch(format!("{} is not a multiplicative-noise bound", other.as_str()))),
        }
    }

    /// Bound curve over `ks`; fails if the stepsize condition does not hold.
    pub fn bound_curve(&self, variant: BoundVariant, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve> {
        if !self.conditions.passed() {
            return Err(Error::ConditionViolated(self.conditions.summary()));
        }
        self.bound_curve_unchecked(variant, delta, k_anchor, ks)
    }

    /// As [`bound_curve`](Self::bound_curve) without the condition gate.
    pub fn bound_curve_unchecked(&self, variant: BoundVariant, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve> {
        if variant != BoundVariant::WorstCase {
            check_delta(delta)?;
        }
        if variant != BoundVariant::FixedTimeMult {
            check_range(ks, k_anchor)?;
        }
        let values = ks.iter().map(|&k| self.value(variant, delta, k_anchor, k)).collect::<Result<Vec<_>>>()?;
        Ok(BoundCurve { ks: ks.to_vec(), values, delta, k_anchor, variant })
    }

    /// Smallest δ for which the fixed-time bound at `k` certifies
    /// `‖x_k − x*‖_c ≤ ε`, i.e. an upper bound on `P(‖x_k − x*‖_c > ε)`.
    ///
    /// The fixed-time bound `C (log(m/δ) + B)^m` inverts in closed form.
    pub fn tail(&self, k: f64, eps: f64) -> Result<f64> {
        self.require(Regime::Positive)?;
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
        }
        let m = self.m.unwrap() as f64;
        let (base, b) = self.fixed_time_parts(k);
        let log_m_over_delta = (eps * eps / base).powf(1.0 / m) - b;
        Ok((m * (-log_m_over_delta).exp()).clamp(0.0, 1.0))
    }

    /// Smallest `k` with fixed-time bound `≤ ε²` at confidence `1 − δ`.
    pub fn sample_complexity(&self, eps: f64, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        self.require(Regime::Positive)?;
        first_crossing(|k| self.fixed_time(delta, k).unwrap_or(f64::INFINITY), eps * eps)
    }
}
