use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::bounds::BoundCurve;
use crate::core::StepSchedule;
use crate::engine::{run_ensemble_visit, EnsembleResult, SAProblem, TrajectoryVisitor};
use crate::error::{Error, Result};

/// Confidence level of the reported Clopper–Pearson bound.
pub const AUDIT_CONFIDENCE: f64 = 0.95;
/// Relative slack when comparing `‖x_k − x*‖²` with a bound value, so that
/// rounding in a bound that is attained exactly is not counted.
pub const AUDIT_REL_TOL: f64 = 1e-9;

/// Whole-trajectory violations of a bound curve on the grid `K..=k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationAudit {
    pub n: usize,
    pub k_anchor: usize,
    /// Last step inspected; the audited event is finite-horizon.
    pub horizon: usize,
    pub violations: usize,
    pub violation_rate: f64,
    /// Upper confidence bound on the violation probability.
    pub cp_upper: f64,
    pub confidence: f64,
    /// Smallest `bound_k − err_k²` seen over all trajectories and steps.
    pub min_slack: f64,
    /// Stream index of the first violating trajectory, if any.
    pub first_violation: Option<u64>,
}

impl ViolationAudit {
    /// `cp_upper ≤ delta`.
    pub fn passes(&self, delta: f64) -> bool {
        self.cp_upper <= delta
    }
}

/// One-sided Clopper–Pearson upper bound for `x` successes in `n` trials.
pub fn clopper_pearson_upper(x: usize, n: usize, conf: f64) -> Result<f64> {
    if n == 0 || x > n || !(conf > 0.0 && conf < 1.0) {
        return Err(Error::InvalidParameter(format!("clopper_pearson_upper({x}, {n}, {conf})")));
    }
    if x == n {
        return Ok(1.0);
    }
    if x == 0 {
        // closed form of the Beta(1, n) quantile
        return Ok(1.0 - (1.0 - conf).powf(1.0 / n as f64));
    }
    let b = Beta::new((x + 1) as f64, (n - x) as f64).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    Ok(b.inverse_cdf(conf).max(x as f64 / n as f64))
}

#[inline]
fn violates(err: f64, bound: f64) -> bool {
    err * err > bound + AUDIT_REL_TOL * bound.abs().max(1.0)
}

fn summarize(n: usize, k_anchor: usize, horizon: usize, per_traj: &[(bool, f64)]) -> Result<ViolationAudit> {
    let violations = per_traj.iter().filter(|t| t.0).count();
    Ok(ViolationAudit {
        n,
        k_anchor,
        horizon,
        violations,
        violation_rate: violations as f64 / n as f64,
        cp_upper: clopper_pearson_upper(violations, n, AUDIT_CONFIDENCE)?,
        confidence: AUDIT_CONFIDENCE,
        min_slack: per_traj.iter().map(|t| t.1).fold(f64::INFINITY, f64::min),
        first_violation: per_traj.iter().position(|t| t.0).map(|i| i as u64),
    })
}

fn check_coverage(curve: &BoundCurve, k_max: usize) -> Result<()> {
    let k0 = curve.k_anchor;
    let contiguous = curve.ks.first() == Some(&k0) && curve.ks.len() >= k_max + 1 - k0.min(k_max + 1);
    if k0 > k_max || !contiguous || (k0..=k_max).any(|k| curve.value_at(k).is_none()) {
        return Err(Error::RangeMismatch(format!("curve does not cover k = {k0}..={k_max}")));
    }
    Ok(())
}

/// Counts trajectories of `ens` with `err_k² > bound_k` for some `k ≥ K`.
pub fn audit_violations(ens: &EnsembleResult, curve: &BoundCurve) -> Result<ViolationAudit> {
    check_coverage(curve, ens.k_max)?;
    let k0 = curve.k_anchor;
    let bounds = &curve.values[..=ens.k_max - k0];
    let per: Vec<(bool, f64)> = ens
        .errors
        .iter()
        .map(|e| {
            let mut v = false;
            let mut slack = f64::INFINITY;
            for (err, b) in e.iter().skip(k0).zip(bounds) {
                v |= violates(*err, *b);
                slack = slack.min(b - err * err);
            }
            (v, slack)
        })
        .collect();
    summarize(ens.n(), k0, ens.k_max, &per)
}

struct AuditVisitor<'a> {
    k0: usize,
    bounds: &'a [f64],
    violated: bool,
    slack: f64,
}

impl TrajectoryVisitor for AuditVisitor<'_> {
    type Output = (bool, f64, Option<usize>);
    fn visit(&mut self, k: usize, _x: &[f64], err: f64) {
        if k >= self.k0 {
            let b = self.bounds[k - self.k0];
            self.violated |= violates(err, b);
            self.slack = self.slack.min(b - err * err);
        }
    }
    fn finish(self, fault: Option<usize>) -> Self::Output {
        (self.violated, self.slack, fault)
    }
}

/// Runs the ensemble and audits it on the fly, without storing trajectories.
/// Faulted trajectories are reported as an error.
#[allow(clippy::too_many_arguments)]
pub fn audit_ensemble<P: SAProblem + ?Sized>(
    p: &P,
    s: &StepSchedule,
    k_max: usize,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
    curve: &BoundCurve,
) -> Result<ViolationAudit> {
    check_coverage(curve, k_max)?;
    let k0 = curve.k_anchor;
    let bounds = &curve.values[..=k_max - k0];
    let out = run_ensemble_visit(p, s, k_max, n, master_seed, workers, |_| AuditVisitor {
        k0,
        bounds,
        violated: false,
        slack: f64::INFINITY,
    })?;
    let faults: Vec<u64> = out.iter().enumerate().filter(|(_, o)| o.2.is_some()).map(|(i, _)| i as u64).collect();
    if !faults.is_empty() {
        return Err(Error::EnsembleFault { count: faults.len(), indices: faults.into_iter().take(16).collect() });
    }
    let per: Vec<(bool, f64)> = out.into_iter().map(|o| (o.0, o.1)).collect();
    summarize(n, k0, k_max, &per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_ensemble, AffineProblem, EnsembleOptions};
    use approx::assert_relative_eq;

    #[test]
    fn clopper_pearson_values() {
        let u = clopper_pearson_upper(0, 2000, 0.95).unwrap();
        assert_relative_eq!(u, 0.0014967448951882512, max_relative = 1e-12);
        assert_eq!(clopper_pearson_upper(5, 5, 0.95).unwrap(), 1.0);
        // Beta(4, 97) quantile at 0.95
        assert_relative_eq!(clopper_pearson_upper(3, 100, 0.95).unwrap(), 0.07571079374983004, max_relative = 1e-8);
        let mut prev = 0.0;
        for x in 0..20 {
            let u = clopper_pearson_upper(x, 200, 0.95).unwrap();
            assert!(u > prev && u >= x as f64 / 200.0);
            prev = u;
        }
    }

    #[test]
    fn trivial_curves() {
        let p = AffineProblem::scalar(0.5, 1.0, 1.0, 5.0).unwrap();
        let s = StepSchedule::harmonic(2.0, 4.0).unwrap();
        let ens = run_ensemble(&p, &s, 50, 100, 1, EnsembleOptions::default()).unwrap();
        let inf = BoundCurve::constant(0..=50, f64::INFINITY, 0);
        assert_eq!(audit_violations(&ens, &inf).unwrap().violations, 0);
        let zero = BoundCurve::constant(0..=50, 0.0, 0);
        let a = audit_violations(&ens, &zero).unwrap();
        assert_eq!(a.violations, 100);
        assert_eq!(a.cp_upper, 1.0);
        let streamed = audit_ensemble(&p, &s, 50, 100, 1, None, &zero).unwrap();
        assert_eq!(streamed, a);
        let short = BoundCurve::constant(0..=10, 1.0, 0);
        assert!(matches!(audit_violations(&ens, &short), Err(Error::RangeMismatch(_))));
    }

    #[test]
    fn streamed_matches_stored() {
        let p = AffineProblem::scalar(0.5, 1.0, 1.0, 5.0).unwrap();
        let s = StepSchedule::harmonic(2.0, 4.0).unwrap();
        let ens = run_ensemble(&p, &s, 200, 300, 9, EnsembleOptions::default()).unwrap();
        let curve = BoundCurve::from_fn(3..=200, 0.1, 3, crate::bounds::BoundVariant::WorstCase, |k| {
            4.0 / (k as f64).sqrt()
        });
        let a = audit_violations(&ens, &curve).unwrap();
        assert!(a.violations > 0 && a.violations < 300);
        assert_eq!(audit_ensemble(&p, &s, 200, 300, 9, Some(2), &curve).unwrap(), a);
    }
}
