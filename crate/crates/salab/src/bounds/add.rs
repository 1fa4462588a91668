//! Sub-Gaussian additive noise with `α_k = α/(k+h)^z`, `z ∈ (0, 1]`.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use super::conditions::{ConditionClause, ConditionReport};
use super::{check_delta, check_range, first_crossing, BoundCurve, BoundVariant};
use crate::core::StepSchedule;
use crate::error::{Error, Result};
use crate::moreau::MoreauConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddInputs {
    pub gamma_c: f64,
    pub sigma_bar: f64,
    pub c_d: f64,
    /// `‖x₀ − x*‖_c`
    pub x0_err: f64,
    pub moreau: MoreauConfig,
    pub alpha: f64,
    /// `None` picks the smallest `h ≥ 1` meeting the stepsize condition.
    pub h: Option<f64>,
    pub z: f64,
}

/// Every derived constant of the additive analysis for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddLedger {
    pub gamma_c: f64,
    pub sigma_bar: f64,
    pub c_d: f64,
    pub l_cm: f64,
    pub u_cm: f64,
    pub u_cm_star: f64,
    pub gamma_tilde: f64,
    pub dbar0: f64,
    pub dbar1: f64,
    pub dbar2: f64,
    pub dbar3: f64,
    pub dbar4: f64,
    pub dbar5: f64,
    pub theta_bar: f64,
    pub cbar1: f64,
    pub cbar2: f64,
    /// Only meaningful for `z = 1` with `D̄₁α > 2`.
    pub cbar3: f64,
    pub cbar4: f64,
    pub cbar5: f64,
    pub moreau: MoreauConfig,
    pub schedule: StepSchedule,
    pub x0_err: f64,
    pub conditions: ConditionReport,
}

/// Raises `h` by a few ulps until `α/h^z ≤ cap` holds in floating point.
pub(crate) fn nudge_h(alpha: f64, mut h: f64, z: f64, cap: f64) -> f64 {
    while alpha / h.powf(z) > cap {
        h *= 1.0 + 4.0 * f64::EPSILON;
    }
    h
}

pub fn build_add_ledger(inp: &AddInputs) -> Result<AddLedger> {
    let AddInputs { gamma_c, sigma_bar, c_d, x0_err, alpha, z, .. } = *inp;
    if !(gamma_c >= 0.0 && gamma_c < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_c must lie in [0,1), got {gamma_c}")));
    }
    if !(sigma_bar > 0.0 && c_d > 0.0 && x0_err >= 0.0 && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma_bar > 0, c_d > 0, x0_err >= 0, alpha > 0 (got {sigma_bar}, {c_d}, {x0_err}, {alpha})"
        )));
    }
    if !(z > 0.0 && z <= 1.0) {
        return Err(Error::InvalidParameter(format!("z must lie in (0,1], got {z}")));
    }
    let cfg = &inp.moreau;
    let mc = cfg.constants(gamma_c);
    let (l_cm, u_cm) = (mc.l_cm, mc.u_cm);
    let (mu, l, lcs2) = (cfg.mu, cfg.l_smooth, cfg.l_cs * cfg.l_cs);
    let s2 = sigma_bar * sigma_bar;
    let u2 = u_cm * u_cm;

    let dbar0 = mu * lcs2 / (8.0 * s2 * l);
    let dbar1 = 2.0 * (1.0 - mc.gamma_tilde);
    let dbar2 = 8.0 * l * u2 / (mu * lcs2);
    let dbar3 = 2.0 * s2 * cfg.u_cm_star * cfg.u_cm_star;
    let dbar4 = 2.0 * c_d * s2 * l / (mu * lcs2);
    let dbar5 = dbar1 * dbar4 / (4.0 * dbar3);
    let theta_bar = dbar1 / (8.0 * dbar3);

    let step_cap = (4.0 * dbar0 * dbar3 / dbar1).min(1.0 / dbar1).min(dbar1 / (4.0 * dbar2));
    let h_4z = if z < 1.0 { (4.0 * z / (dbar1 * alpha)).powf(1.0 / (1.0 - z)) } else { 0.0 };
    let h_2z = if z < 1.0 { (2.0 * z / (dbar1 * alpha)).powf(1.0 / (1.0 - z)) } else { 0.0 };
    let h = match inp.h {
        Some(h) => h,
        None => nudge_h(alpha, (alpha / step_cap).powf(1.0 / z).max(h_4z).max(1.0), z, step_cap),
    };
    let schedule = StepSchedule::new(alpha, h, z)?;

    let cbar1 = 16.0 * dbar3 * u2 * alpha / dbar1;
    let cbar2 = u2 / (l_cm * l_cm);
    let cbar3 = 16.0 * E * u2 * dbar4 * alpha * alpha / (dbar1 * alpha / 2.0 - 1.0);
    let cbar4 = 32.0 * u2 * dbar3 * alpha / dbar1;
    let cbar5 = 16.0 * E * u2 * dbar4 * alpha / dbar1;

    let mut conditions = ConditionReport::default();
    let cl = &mut conditions.clauses;
    cl.push(ConditionClause::new("gamma_tilde < 1", mc.gamma_tilde, "<", 1.0, true));
    cl.push(ConditionClause::new("h >= 1", h, ">=", 1.0, true));
    cl.push(ConditionClause::new(
        "alpha0 <= min(4 Dbar0 Dbar3/Dbar1, 1/Dbar1, Dbar1/(4 Dbar2))",
        schedule.alpha0(),
        "<=",
        step_cap,
        true,
    ));
    if z == 1.0 {
        cl.push(ConditionClause::new("alpha > 2/Dbar1", alpha, ">", 2.0 / dbar1, true));
    } else {
        cl.push(ConditionClause::new("h >= (4z/(Dbar1 alpha))^(1/(1-z))", h, ">=", h_4z.max(1.0), true));
        cl.push(ConditionClause::new("h >= (2z/(Dbar1 alpha))^(1/(1-z))", h, ">=", h_2z.max(1.0), false));
    }

    Ok(AddLedger {
        gamma_c,
        sigma_bar,
        c_d,
        l_cm,
        u_cm,
        u_cm_star: cfg.u_cm_star,
        gamma_tilde: mc.gamma_tilde,
        dbar0,
        dbar1,
        dbar2,
        dbar3,
        dbar4,
        dbar5,
        theta_bar,
        cbar1,
        cbar2,
        cbar3,
        cbar4,
        cbar5,
        moreau: cfg.clone(),
        schedule,
        x0_err,
        conditions,
    })
}

impl AddLedger {
    pub fn alpha(&self) -> f64 {
        self.schedule.alpha
    }

    pub fn h(&self) -> f64 {
        self.schedule.h
    }

    pub fn z(&self) -> f64 {
        self.schedule.z
    }

    /// `λ_k = θ̄ / α_k`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.theta_bar / self.schedule.at(k)
    }

    fn tz(&self, k: f64) -> f64 {
        (k + self.h()).powf(self.z())
    }

    /// Decay of the initial error from `h` to `k + h`.
    fn init_decay(&self, k: f64) -> f64 {
        let (a, h, z) = (self.alpha(), self.h(), self.z());
        if z == 1.0 {
            (h / (k + h)).powf(self.dbar1 * a / 2.0)
        } else {
            (-self.dbar1 * a / (2.0 * (1.0 - z)) * ((k + h).powf(1.0 - z) - h.powf(1.0 - z))).exp()
        }
    }

    /// Maximal bound (Markov inequality + telescoping union bound) at step
    /// `k ≥ K`. `K = 0` is read as `K = 1` inside `log((k+1)/K^{1/2})`.
    pub fn markov_bound(&self, delta: f64, k_anchor: f64, k: f64) -> f64 {
        let ke = k_anchor.max(1.0);
        let tail = if self.z() == 1.0 { self.cbar3 } else { self.cbar5 };
        (self.cbar1 * (1.0 / delta).ln() + tail + self.cbar4 * ((k + 1.0) / ke.sqrt()).ln()) / self.tz(k)
            + self.cbar2 * self.x0_err.powi(2) * self.init_decay(k)
    }

    /// Maximal bound through the supermartingale and Ville's inequality, with
    /// `s = Σ_{i=K}^{k−1} α_i` supplied by the caller.
    pub fn ville_with_sum(&self, delta: f64, k_anchor: f64, k: f64, s: f64) -> f64 {
        let (a, h, z) = (self.alpha(), self.h(), self.z());
        let u2 = self.u_cm * self.u_cm;
        let lead = 16.0 * self.dbar3 * u2 * a / (self.dbar1 * self.tz(k));
        let drift = lead * self.dbar5 * s;
        let e0 = self.cbar2 * self.x0_err.powi(2);
        if z == 1.0 {
            let p = self.dbar1 * a / 2.0;
            lead * (1.0 / delta).ln()
                + e0 * h.powf(p) / ((k + h) * (k_anchor + h).powf(p - 1.0))
                + self.cbar3 / (k + h)
                + drift
        } else {
            let init = ((k_anchor + h) / (k + h)).powf(z)
                * (-self.dbar1 * a / (2.0 * (1.0 - z)) * ((k_anchor + h).powf(1.0 - z) - h.powf(1.0 - z))).exp();
            lead * (1.0 / delta).ln() + e0 * init + 16.0 * self.dbar4 * u2 * a / (self.dbar1 * self.tz(k)) + drift
        }
    }

    /// Fixed-time bound at step `k`.
    pub fn fixed_time(&self, delta: f64, k: f64) -> f64 {
        self.cbar1 * (1.0 / delta).ln() / self.tz(k) + self.deterministic(k)
    }

    /// The δ-free part of the fixed-time bound.
    fn deterministic(&self, k: f64) -> f64 {
        let tail = if self.z() == 1.0 { self.cbar3 + self.cbar4 } else { self.cbar4 + self.cbar5 };
        self.cbar2 * self.x0_err.powi(2) * self.init_decay(k) + tail / self.tz(k)
    }

    /// Upper bound on `P(‖x_k − x*‖_c > ε)`, clamped to `[0, 1]`.
    pub fn tail(&self, k: f64, eps: f64) -> f64 {
        (-(self.tz(k) / self.cbar1) * (eps * eps - self.deterministic(k))).exp().clamp(0.0, 1.0)
    }

    /// Smallest `k` with fixed-time bound `≤ ε²` at confidence `1 − δ`.
    pub fn sample_complexity(&self, eps: f64, delta: f64) -> Result<f64> {
        check_delta(delta)?;
        first_crossing(|k| self.fixed_time(delta, k), eps * eps)
    }

    /// One bound value; no condition check. The Ville variant sums the
    /// stepsizes directly.
    pub fn value(&self, variant: BoundVariant, delta: f64, k_anchor: usize, k: usize) -> Result<f64> {
        let (ka, kf) = (k_anchor as f64, k as f64);
        match variant {
            BoundVariant::AddZ1 | BoundVariant::AddZlt1 => {
                self.check_variant(variant)?;
                Ok(self.markov_bound(delta, ka, kf))
            }
            BoundVariant::AddVille => {
                let s: f64 = (k_anchor..k).map(|i| self.schedule.at(i)).sum();
                Ok(self.ville_with_sum(delta, ka, kf, s))
            }
            BoundVariant::FixedTimeAdd => Ok(self.fixed_time(delta, kf)),
            other => Err(Error::RegimeMismatch(format!("{} is not an additive-noise bound", other.as_str()))),
        }
    }

    fn check_variant(&self, variant: BoundVariant) -> Result<()> {
        let want = if self.z() == 1.0 { BoundVariant::AddZ1 } else { BoundVariant::AddZlt1 };
        if variant == want {
            Ok(())
        } else {
            Err(Error::RegimeMismatch(format!("z = {} needs variant {}", self.z(), want.as_str())))
        }
    }

    /// The maximal bound matching the schedule's `z`.
    pub fn primary_variant(&self) -> BoundVariant {
        if self.z() == 1.0 {
            BoundVariant::AddZ1
        } else {
            BoundVariant::AddZlt1
        }
    }

    pub fn bound_curve(&self, variant: BoundVariant, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve> {
        if !self.conditions.passed() {
            return Err(Error::ConditionViolated(self.conditions.summary()));
        }
        self.bound_curve_unchecked(variant, delta, k_anchor, ks)
    }

    pub fn bound_curve_unchecked(&self, variant: BoundVariant, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve> {
        check_delta(delta)?;
        if variant != BoundVariant::FixedTimeAdd {
            check_range(ks, k_anchor)?;
        }
        let values = if variant == BoundVariant::AddVille {
            // running Σ_{i=K}^{k−1} α_i over sorted ks
            let mut order: Vec<usize> = (0..ks.len()).collect();
            order.sort_by_key(|&i| ks[i]);
            let mut values = vec![0.0; ks.len()];
            let (mut s, mut at) = (0.0, k_anchor);
            for i in order {
                while at < ks[i] {
                    s += self.schedule.at(at);
                    at += 1;
                }
                values[i] = self.ville_with_sum(delta, k_anchor as f64, ks[i] as f64, s);
            }
            values
        } else {
            ks.iter().map(|&k| self.value(variant, delta, k_anchor, k)).collect::<Result<Vec<_>>>()?
        };
        Ok(BoundCurve { ks: ks.to_vec(), values, delta, k_anchor, variant })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::NormSpec;
    use approx::assert_relative_eq;

    pub(crate) fn inputs(alpha: f64, z: f64) -> AddInputs {
        AddInputs {
            gamma_c: 0.5,
            sigma_bar: 1.0,
            c_d: 1.0,
            x0_err: 1.0,
            moreau: MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0).unwrap(),
            alpha,
            h: None,
            z,
        }
    }

    #[test]
    fn reference_constants() {
        let l = build_add_ledger(&inputs(4.4, 1.0)).unwrap();
        assert_relative_eq!(l.dbar0, 0.125, max_relative = 1e-14);
        assert_relative_eq!(l.dbar1, 1.0, max_relative = 1e-14);
        assert_relative_eq!(l.dbar2, 16.0, max_relative = 1e-14);
        assert_relative_eq!(l.dbar3, 1.0, max_relative = 1e-14);
        assert_relative_eq!(l.dbar4, 2.0, max_relative = 1e-14);
        assert_relative_eq!(l.theta_bar, l.dbar1 / (8.0 * l.dbar3), max_relative = 1e-14);
        assert_relative_eq!(l.dbar5, l.dbar1 * l.dbar4 / (4.0 * l.dbar3), max_relative = 1e-14);
        assert_relative_eq!(l.h(), 281.6, max_relative = 1e-12);
        assert!(l.conditions.passed(), "{}", l.conditions.summary());
        let l = build_add_ledger(&inputs(1.0, 0.6)).unwrap();
        assert!(l.h() >= 1024.0 && l.h() < 1024.0 * (1.0 + 1e-12));
        assert!(l.schedule.alpha0() <= 1.0 / 64.0);
        assert!(l.conditions.passed(), "{}", l.conditions.summary());
    }

    #[test]
    fn h_threshold_example() {
        // z = 0.5, D̄₁α = 4z·2 = 4: the 4z threshold is (1/2)² < 1, so h ≥ 1 rules
        let l = build_add_ledger(&AddInputs { h: Some(1.0), ..inputs(4.0, 0.5) }).unwrap();
        let c = l.conditions.clause("h >= (4z/(Dbar1 alpha))^(1/(1-z))").unwrap();
        assert_eq!(c.threshold, 1.0);
        assert!(c.pass);
        let l = build_add_ledger(&AddInputs { h: Some(2.0), ..inputs(0.1, 0.5) }).unwrap();
        assert!(!l.conditions.clause("h >= (4z/(Dbar1 alpha))^(1/(1-z))").unwrap().pass);
        assert!(!l.conditions.clause("h >= (2z/(Dbar1 alpha))^(1/(1-z))").unwrap().pass);
    }

    #[test]
    fn structural_properties() {
        for &(a, z) in &[(4.4, 1.0), (1.0, 0.6)] {
            let l = build_add_ledger(&inputs(a, z)).unwrap();
            let v = l.primary_variant();
            let ks: Vec<usize> = (0..300).collect();
            for variant in [v, BoundVariant::AddVille, BoundVariant::FixedTimeAdd] {
                let c = l.bound_curve(variant, 0.05, 0, &ks).unwrap();
                let c2 = l.bound_curve(variant, 0.01, 0, &ks).unwrap();
                assert!(c.values[0] >= l.cbar2 * l.x0_err.powi(2), "{variant:?}");
                assert!(c.values.iter().zip(&c2.values).all(|(x, y)| x.is_finite() && *x > 0.0 && y > x));
            }
            // the exponential decay term equals 1 at k = 0
            assert_eq!(l.init_decay(0.0), 1.0);
            let other = if z == 1.0 { BoundVariant::AddZlt1 } else { BoundVariant::AddZ1 };
            assert!(l.value(other, 0.05, 0, 3).is_err());
        }
    }

    #[test]
    fn ville_curve_matches_pointwise_values() {
        let l = build_add_ledger(&inputs(4.4, 1.0)).unwrap();
        let ks = [40usize, 10, 25, 100];
        let c = l.bound_curve(BoundVariant::AddVille, 0.05, 10, &ks).unwrap();
        for (k, v) in ks.iter().zip(&c.values) {
            assert_relative_eq!(*v, l.value(BoundVariant::AddVille, 0.05, 10, *k).unwrap(), max_relative = 1e-13);
        }
    }

    #[test]
    fn tail_round_trip_and_clamp() {
        for &(a, z) in &[(4.4, 1.0), (1.0, 0.6)] {
            let l = build_add_ledger(&inputs(a, z)).unwrap();
            for &k in &[0.0, 100.0, 1e5] {
                for &delta in &[0.5, 0.05, 1e-8] {
                    let eps = l.fixed_time(delta, k).sqrt();
                    assert_relative_eq!(l.tail(k, eps), delta, max_relative = 1e-9);
                }
                let floor = l.deterministic(k).sqrt();
                assert_eq!(l.tail(k, 0.5 * floor), 1.0);
            }
            let k1 = l.sample_complexity(1e-2, 0.05).unwrap();
            let k2 = l.sample_complexity(5e-3, 0.05).unwrap();
            assert!(l.fixed_time(0.05, k1) <= 1e-4);
            let ratio = k2 / k1;
            let expect = 4f64.powf(1.0 / z);
            assert!(ratio > 0.85 * expect && ratio < 1.15 * expect, "z {z} ratio {ratio}");
        }
    }
}
