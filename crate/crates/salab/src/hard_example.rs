//! The one-dimensional multiplicative-noise counterexample
//! `F(x, Y) = Yx`: exact path enumeration, the rescaled MGF, and a
//! log-space certificate that the MGF diverges for large tail exponents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{NormSpec, StepSchedule, StreamRng};
use crate::engine::{run_ensemble_visit, NoiseModel, SAProblem, TrajectoryVisitor};
use crate::error::{Error, Result};
use crate::verify::{empirical_ccdf, fit_tail_exponent, TailFit, TailFitOptions};

/// Largest `k` enumerated exactly (`2^k` paths).
pub const ENUMERATION_CAP: usize = 24;
/// Exponents above this are flagged as overflowing `f64`.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

fn scalar_norm() -> NormSpec {
    NormSpec::euclidean(1)
}

/// `Y = a + N` with probability `1/(N+1)`, otherwise `a − 1`; `E[Y] = a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardExampleSpec {
    pub a: f64,
    pub n: f64,
    pub x0: f64,
    pub schedule: StepSchedule,
    /// Test hook: every draw is the large atom.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub force_max: bool,
    #[serde(skip, default = "scalar_norm")]
    norm: NormSpec,
}

impl HardExampleSpec {
    pub fn new(a: f64, n: f64, x0: f64, schedule: StepSchedule) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::InvalidParameter(format!("a must lie in (0,1), got {a}")));
        }
        if !(n >= 1.0 && n.is_finite()) {
            return Err(Error::InvalidParameter(format!("N must be >= 1, got {n}")));
        }
        if !(x0 > 0.0 && x0.is_finite()) {
            return Err(Error::InvalidParameter(format!("x0 must be positive, got {x0}")));
        }
        if !(schedule.alpha0() < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "alpha_0 = {} must be < 1/2 to keep iterates positive",
                schedule.alpha0()
            )));
        }
        Ok(HardExampleSpec { a, n, x0, schedule, force_max: false, norm: scalar_norm() })
    }

    pub fn forced_max(mut self) -> Self {
        self.force_max = true;
        self
    }

    /// `D = a + N − 1`.
    pub fn d(&self) -> f64 {
        self.a + self.n - 1.0
    }

    /// `m_e = ⌈2αD⌉ + 1`.
    pub fn m_e(&self) -> u32 {
        (2.0 * self.schedule.alpha * self.d()).ceil() as u32 + 1
    }

    pub fn p_max(&self) -> f64 {
        1.0 / (self.n + 1.0)
    }

    /// The two atoms of `Y` as `(value, probability)`, large one first.
    pub fn y_atoms(&self) -> [(f64, f64); 2] {
        [(self.a + self.n, self.p_max()), (self.a - 1.0, self.n / (self.n + 1.0))]
    }

    /// Scale `(k+h)^{z/2}` that makes `x_k` order one.
    pub fn rescale(&self, k: usize) -> f64 {
        (k as f64 + self.schedule.h).powf(self.schedule.z / 2.0)
    }

    /// `E[x_k] = x₀ Π_{i<k} (1 + α_i(a−1))`.
    pub fn mean(&self, k: usize) -> f64 {
        (0..k).fold(self.x0, |x, i| x * (1.0 + self.schedule.at(i) * (self.a - 1.0)))
    }

    fn check_cap(k: usize) -> Result<()> {
        if k > ENUMERATION_CAP {
            return Err(Error::EnumerationCap { k, cap: ENUMERATION_CAP });
        }
        Ok(())
    }

    /// Depth-first walk over all `2^k` paths, calling `f(x_k, log P(path))`.
    pub fn for_each_atom<F: FnMut(f64, f64)>(&self, k: usize, mut f: F) -> Result<()> {
        Self::check_cap(k)?;
        let [(hi, ph), (lo, pl)] = self.y_atoms();
        let steps: Vec<(f64, f64)> = (0..k)
            .map(|i| {
                let a = self.schedule.at(i);
                (1.0 + a * (hi - 1.0), 1.0 + a * (lo - 1.0))
            })
            .collect();
        let (lph, lpl) = (ph.ln(), pl.ln());
        fn walk<F: FnMut(f64, f64)>(steps: &[(f64, f64)], x: f64, lp: f64, l: (f64, f64), f: &mut F) {
            match steps.split_first() {
                None => f(x, lp),
                Some((&(up, down), rest)) => {
                    walk(rest, x * up, lp + l.0, l, f);
                    walk(rest, x * down, lp + l.1, l, f);
                }
            }
        }
        walk(&steps, self.x0, 0.0, (lph, lpl), &mut f);
        Ok(())
    }

    /// All `2^k` atoms `(x_k, probability)`, sorted by value.
    pub fn exact_distribution(&self, k: usize) -> Result<Vec<(f64, f64)>> {
        let mut atoms = Vec::with_capacity(1 << k.min(ENUMERATION_CAP));
        self.for_each_atom(k, |x, lp| atoms.push((x, lp.exp())))?;
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(atoms)
    }

    /// `E[exp(λ ((k+h)^{z/2} x_k)^β̃)]` by exact enumeration, in log space.
    pub fn exact_rescaled_mgf(&self, k: usize, lambda: f64, beta_tilde: f64) -> Result<MgfValue> {
        if !(lambda > 0.0 && beta_tilde > 0.0) {
            return Err(Error::InvalidParameter("lambda and beta_tilde must be positive".into()));
        }
        let r = self.rescale(k);
        let mut terms = Vec::with_capacity(1 << k.min(ENUMERATION_CAP));
        let mut max_exponent = f64::NEG_INFINITY;
        self.for_each_atom(k, |x, lp| {
            let e = lambda * (r * x).powf(beta_tilde);
            max_exponent = max_exponent.max(e);
            terms.push(lp + e);
        })?;
        Ok(MgfValue::from_log(log_sum_exp(&terms), max_exponent > OVERFLOW_EXPONENT))
    }

    /// Log of the all-maximal-path contribution to the rescaled MGF,
    /// `λ x₀^β̃ (k+h)^{zβ̃/2} Π_{i=k_ε}^{k−1} (1+α_i D)^β̃ − k ln(N+1)`,
    /// a lower bound on `log E[exp(λ((k+h)^{z/2} x_k)^β̃)]` for `k ≥ k_ε`.
    pub fn mgf_lower_bound(&self, k: usize, lambda: f64, beta_tilde: f64, k_eps: usize) -> Result<MgfValue> {
        if k < k_eps {
            return Err(Error::InvalidParameter(format!("k = {k} precedes k_eps = {k_eps}")));
        }
        let d = self.d();
        let log_prod: f64 = (k_eps..k).map(|i| (self.schedule.at(i) * d).ln_1p()).sum();
        Ok(self.lower_bound_from_log_prod(k, lambda, beta_tilde, log_prod))
    }

    fn lower_bound_from_log_prod(&self, k: usize, lambda: f64, bt: f64, log_prod: f64) -> MgfValue {
        let log_e = lambda.ln() + bt * (self.x0.ln() + log_prod + self.rescale(k).ln());
        let e = log_e.exp();
        MgfValue::from_log(e - k as f64 * (self.n + 1.0).ln(), e > OVERFLOW_EXPONENT)
    }

    /// `log` of the lower bound at every `k` in `k_eps..=k_max`, in one pass.
    pub fn mgf_lower_bound_path(&self, k_max: usize, lambda: f64, beta_tilde: f64, k_eps: usize) -> Vec<(usize, f64)> {
        let d = self.d();
        let mut log_prod = 0.0;
        let mut out = Vec::with_capacity(k_max.saturating_sub(k_eps) + 1);
        for k in k_eps..=k_max {
            out.push((k, self.lower_bound_from_log_prod(k, lambda, beta_tilde, log_prod).log_value));
            log_prod += (self.schedule.at(k) * d).ln_1p();
        }
        out
    }

    /// Power of `k` governing the certificate's growth for a given `ε`:
    /// `β̃ (1/2 + αD/(1+ε))` when `z = 1`. For `z < 1` the product grows like
    /// `exp(c k^{1−z})`, faster than any power, and `+∞` is returned.
    pub fn certificate_exponent(&self, beta_tilde: f64, eps: f64) -> f64 {
        let s = &self.schedule;
        if s.z == 1.0 {
            beta_tilde * (0.5 + s.alpha * self.d() / (1.0 + eps))
        } else {
            f64::INFINITY
        }
    }

    /// Finds `ε = 2^{−j}` (largest first) whose certificate grows faster than
    /// the `k ln(N+1)` path penalty, with `k_ε` the first step satisfying
    /// `exp(α_k D/(1+ε)) ≤ 1 + α_k D`. `None` when no such `ε` exists.
    pub fn find_epsilon_witness(&self, beta_tilde: f64, max_j: u32, k_search: usize) -> Option<EpsilonWitness> {
        let d = self.d();
        (1..=max_j).find_map(|j| {
            let eps = 2f64.powi(-(j as i32));
            let exponent = self.certificate_exponent(beta_tilde, eps);
            if !(exponent > 1.0) {
                return None;
            }
            let k_eps = (0..=k_search).find(|&k| {
                let ad = self.schedule.at(k) * d;
                (ad / (1.0 + eps)).exp() <= 1.0 + ad
            })?;
            Some(EpsilonWitness { eps, k_eps, exponent })
        })
    }
}

impl SAProblem for HardExampleSpec {
    fn dim(&self) -> usize {
        1
    }
    fn sample_op(&self, x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let big = self.force_max || rng.random::<f64>() < self.p_max();
        let y = if big { self.a + self.n } else { self.a - 1.0 };
        out[0] = y * x[0];
    }
    fn expected_op(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.a * x[0];
    }
    fn norm_c(&self) -> &NormSpec {
        &self.norm
    }
    fn gamma_c(&self) -> f64 {
        self.a
    }
    fn noise(&self) -> NoiseModel {
        // |F(x,Y) − ax| = |Y − a||x| ≤ N|x|
        NoiseModel::Multiplicative { sigma: self.n }
    }
    fn x_star(&self) -> &[f64] {
        &[0.0]
    }
    fn x0(&self) -> &[f64] {
        std::slice::from_ref(&self.x0)
    }
    fn name(&self) -> String {
        format!("hard_example(a={}, N={})", self.a, self.n)
    }
}

/// A possibly overflowing positive quantity, carried in log space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgfValue {
    pub log_value: f64,
    /// `exp(log_value)`, `+∞` when it does not fit.
    pub value: f64,
    /// Some exponent exceeded the overflow guard.
    pub overflow: bool,
}

impl MgfValue {
    fn from_log(log_value: f64, overflow: bool) -> Self {
        let value = if overflow || log_value > OVERFLOW_EXPONENT { f64::INFINITY } else { log_value.exp() };
        MgfValue { log_value, value, overflow: overflow || value.is_infinite() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonWitness {
    pub eps: f64,
    pub k_eps: usize,
    /// Power of `k` in the certificate's exponent; `> 1` means it beats the
    /// linear path penalty.
    pub exponent: f64,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// Sup distance between the empirical CDF of `samples` and a discrete
/// distribution given by sorted atoms.
pub fn ks_distance_discrete(samples: &[f64], atoms: &[(f64, f64)]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len() as f64;
    let (mut cdf, mut j, mut worst) = (0.0, 0, 0.0f64);
    let mut i = 0;
    // Both CDFs are right-continuous step functions; compare after each jump
    // point of either.
    while i < atoms.len() || j < s.len() {
        let next = match (atoms.get(i), s.get(j)) {
            (Some(a), Some(&x)) => a.0.min(x),
            (Some(a), None) => a.0,
            (None, Some(&x)) => x,
            (None, None) => break,
        };
        while i < atoms.len() && atoms[i].0 <= next {
            cdf += atoms[i].1;
            i += 1;
        }
        while j < s.len() && s[j] <= next {
            j += 1;
        }
        worst = worst.max((cdf - j as f64 / n).abs());
    }
    worst
}

struct AtStep {
    k: usize,
    value: f64,
}

impl TrajectoryVisitor for AtStep {
    type Output = (f64, Option<usize>);
    fn visit(&mut self, k: usize, _x: &[f64], err: f64) {
        if k == self.k {
            self.value = err;
        }
    }
    fn finish(self, fault: Option<usize>) -> Self::Output {
        (self.value, fault)
    }
}

/// `‖x_k − x*‖_c` for `n` independent trajectories (trajectory `i` on stream
/// `i` of `master_seed`).
pub fn errors_at_step<P: SAProblem + ?Sized>(
    p: &P,
    s: &StepSchedule,
    k: usize,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> Result<Vec<f64>> {
    let out = run_ensemble_visit(p, s, k, n, master_seed, workers, |_| AtStep { k, value: f64::NAN })?;
    let faults: Vec<u64> = out.iter().enumerate().filter(|(_, o)| o.1.is_some()).map(|(i, _)| i as u64).collect();
    if !faults.is_empty() {
        return Err(Error::EnsembleFault { count: faults.len(), indices: faults.into_iter().take(16).collect() });
    }
    Ok(out.into_iter().map(|o| o.0).collect())
}

/// Tail fit of the rescaled errors `(k+h)^{z/2} ‖x_k − x*‖_c` of any problem.
pub fn tail_exponent_of<P: SAProblem + ?Sized>(
    p: &P,
    s: &StepSchedule,
    k: usize,
    n_samples: usize,
    master_seed: u64,
    opts: &TailFitOptions,
) -> Result<TailFit> {
    if n_samples < 10_000 {
        return Err(Error::InvalidParameter(format!("tail fits need >= 10^4 samples, got {n_samples}")));
    }
    let r = (k as f64 + s.h).powf(s.z / 2.0);
    let e: Vec<f64> = errors_at_step(p, s, k, n_samples, master_seed, None)?.into_iter().map(|v| v * r).collect();
    fit_tail_exponent(&empirical_ccdf(&e)?, opts)
}

pub fn tail_exponent_empirical(
    spec: &HardExampleSpec,
    k: usize,
    n_samples: usize,
    master_seed: u64,
    opts: &TailFitOptions,
) -> Result<TailFit> {
    tail_exponent_of(spec, &spec.schedule, k, n_samples, master_seed, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{derive_stream, SeedSpec};
    use crate::engine::run_trajectory;

    fn spec(alpha: f64, h: f64) -> HardExampleSpec {
        HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(alpha, h).unwrap()).unwrap()
    }

    #[test]
    fn first_step_atoms() {
        let s = spec(1.0, 4.0);
        assert_eq!(s.exact_distribution(1).unwrap(), vec![(0.625, 0.5), (1.125, 0.5)]);
        assert_eq!(s.exact_distribution(0).unwrap(), vec![(1.0, 1.0)]);
        assert!((s.mean(1) - 0.875).abs() < 1e-15);
        let mut rng = derive_stream(SeedSpec::new(0, 0));
        let mut out = [0.0];
        s.clone().forced_max().sample_op(&[1.0], &mut rng, &mut out);
        assert_eq!(out[0], 1.5);
        assert!(matches!(s.exact_distribution(25), Err(Error::EnumerationCap { k: 25, cap: 24 })));
    }

    #[test]
    fn validation() {
        let sch = StepSchedule::harmonic(2.0, 4.0).unwrap();
        assert!(HardExampleSpec::new(0.5, 1.0, 1.0, sch).is_err());
        assert!(HardExampleSpec::new(1.0, 1.0, 1.0, StepSchedule::harmonic(1.0, 4.0).unwrap()).is_err());
        assert!(HardExampleSpec::new(0.5, 0.5, 1.0, StepSchedule::harmonic(1.0, 4.0).unwrap()).is_err());
        let s = spec(4.0, 9.0);
        assert_eq!(s.m_e(), 5);
        let [(y1, p1), (y2, p2)] = s.y_atoms();
        assert!((y1 * p1 + y2 * p2 - s.a).abs() < 1e-15);
    }

    #[test]
    fn enumeration_invariants() {
        let s = spec(4.0, 9.0);
        for k in [5, 12, 16] {
            let atoms = s.exact_distribution(k).unwrap();
            assert_eq!(atoms.len(), 1 << k);
            let total: f64 = atoms.iter().map(|a| a.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            let mean: f64 = atoms.iter().map(|a| a.0 * a.1).sum();
            assert!((mean - s.mean(k)).abs() < 1e-12, "{mean} vs {}", s.mean(k));
            assert!(atoms.iter().all(|a| a.0 > 0.0));
        }
    }

    #[test]
    fn forced_max_trajectory_is_the_product() {
        let s = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(2.0, 5.0).unwrap()).unwrap().forced_max();
        let t = run_trajectory(&s, &s.schedule, 10, SeedSpec::new(1, 0)).unwrap();
        let mut x = 1.0;
        for k in 0..10 {
            assert!((t.errors[k] - x).abs() <= 1e-12 * x);
            x *= 1.0 + s.schedule.at(k) * 0.5;
        }
    }

    #[test]
    fn mgf_oracles() {
        // log-sum-exp over the 2^k paths, computed independently in Python
        let s = spec(4.0, 9.0);
        let cases = [
            (5, 1.0, 2.0, 72.75648631942249),
            (10, 0.1, 2.0, 26.94013313333334),
            (8, 0.5, 1.0, 1.8987887093941194),
        ];
        for (k, lam, bt, want) in cases {
            let v = s.exact_rescaled_mgf(k, lam, bt).unwrap();
            assert!((v.log_value - want).abs() <= 1e-9 * want.abs(), "k={k}: {} vs {want}", v.log_value);
        }
        let tiny = s.exact_rescaled_mgf(10, 1e-12, 2.0).unwrap();
        assert!((tiny.value - 1.0).abs() < 1e-9);
        let (v1, v2) = (s.exact_rescaled_mgf(10, 1.0, 2.0).unwrap(), s.exact_rescaled_mgf(10, 2.0, 2.0).unwrap());
        assert!(v2.log_value >= v1.log_value);
        assert!(v1.overflow || v1.value.is_finite());
    }

    #[test]
    fn mgf_increasing_for_large_exponent() {
        let s = spec(2.0 / (1.0 - 0.5) * 1.1, 9.0);
        let v: Vec<f64> = (10..=20).map(|k| s.exact_rescaled_mgf(k, 1.0, 2.0).unwrap().log_value).collect();
        assert!(v.windows(2).all(|w| w[1] > w[0]), "{v:?}");
    }

    #[test]
    fn lower_bound_below_exact() {
        let s = spec(4.0, 9.0);
        for k in [0usize, 1, 3, 5, 8, 10, 12, 14, 16, 18] {
            for k_eps in [0usize, k / 2, k] {
                let lb = s.mgf_lower_bound(k, 0.3, 1.0, k_eps).unwrap();
                let ex = s.exact_rescaled_mgf(k, 0.3, 1.0).unwrap();
                assert!(lb.log_value <= ex.log_value + 1e-12, "k={k}");
            }
        }
        let path = s.mgf_lower_bound_path(40, 0.3, 1.0, 3);
        for (k, l) in path.iter().step_by(7) {
            assert!((l - s.mgf_lower_bound(*k, 0.3, 1.0, 3).unwrap().log_value).abs() <= 1e-9 * l.abs().max(1.0));
        }
    }

    #[test]
    fn divergence_certificate() {
        let s = spec(4.0, 9.0);
        let w = s.find_epsilon_witness(0.5, 12, 1_000_000).unwrap();
        assert!(w.exponent > 1.0 && w.eps <= 0.5);
        let path = s.mgf_lower_bound_path(1_000_000, 1.0, 0.5, w.k_eps);
        assert!(path.iter().any(|&(_, l)| l > 100.0));
        // below the threshold exponent the certificate only decreases
        assert!(s.find_epsilon_witness(0.2, 12, 1_000_000).is_none());
        let low = s.mgf_lower_bound_path(100_000, 1.0, 0.2, 0);
        assert!(low.last().unwrap().1 < -1e4);
        let slow = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::new(1.0, 4.0, 0.6).unwrap()).unwrap();
        let w = slow.find_epsilon_witness(0.2, 12, 1_000_000).unwrap();
        assert_eq!(w.eps, 0.5);
        let path = slow.mgf_lower_bound_path(1_000_000, 1.0, 0.2, w.k_eps);
        assert!(path.iter().any(|&(_, l)| l > 100.0));
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let s = spec(4.0, 9.0);
        let x = errors_at_step(&s, &s.schedule, 12, 20_000, 5, None).unwrap();
        let atoms = s.exact_distribution(12).unwrap();
        let ks = ks_distance_discrete(&x, &atoms);
        assert!(ks < 0.02, "{ks}");
        assert_eq!(ks_distance_discrete(&[1.0, 2.0], &[(1.0, 0.5), (2.0, 0.5)]), 0.0);
        assert!((ks_distance_discrete(&[1.0, 1.0], &[(1.0, 0.5), (2.0, 0.5)]) - 0.5).abs() < 1e-15);
    }
}
