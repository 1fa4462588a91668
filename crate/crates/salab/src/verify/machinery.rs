use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::bounds::{AddLedger, MultLedger};
use crate::engine::{run_ensemble_visit, SAProblem, TrajectoryVisitor};
use crate::error::{Error, Result};
use crate::moreau::{moreau_eval, MoreauConfig};

/// Number of standard errors a Monte Carlo estimate may exceed its bound by.
pub const MACHINERY_SE_GATE: f64 = 3.0;

/// Constant ledger the checks read `λ_k`, the drift constants and the
/// stepsizes from.
#[derive(Clone, Copy, Debug)]
pub enum Machinery<'a> {
    Mult(&'a MultLedger),
    Add(&'a AddLedger),
}

/// Deliberate miscalibration, for negative controls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// Every `λ_k` multiplied by the factor.
    LambdaScale(f64),
    /// The additive drift constant (`D₃`, resp. `D̄₅`, and the matching
    /// recursion term) multiplied by the factor.
    DriftScale(f64),
}

#[derive(Clone, Debug)]
pub struct MachineryOptions {
    pub k_range: RangeInclusive<usize>,
    pub n: usize,
    pub master_seed: u64,
    pub workers: Option<usize>,
    pub corruption: Corruption,
}

impl Default for MachineryOptions {
    fn default() -> Self {
        MachineryOptions { k_range: 0..=50, n: 10_000, master_seed: 0, workers: None, corruption: Corruption::None }
    }
}

/// One paired comparison `E[lhs] ≤ E[rhs]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineryRow {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Standard error of the paired difference `lhs − rhs`.
    pub se: f64,
    /// `mean(lhs − rhs) / se` (0 when both sides coincide exactly).
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineryReport {
    pub check: String,
    pub regime: String,
    pub corruption: Corruption,
    pub n: usize,
    pub rows: Vec<MachineryRow>,
    pub passed: bool,
    /// Row with the largest `z`.
    pub worst_k: Option<usize>,
}

impl Machinery<'_> {
    fn regime(&self) -> &'static str {
        match self {
            Machinery::Mult(_) => "multiplicative",
            Machinery::Add(_) => "additive",
        }
    }
    fn moreau(&self) -> &MoreauConfig {
        match self {
            Machinery::Mult(l) => &l.moreau,
            Machinery::Add(l) => &l.moreau,
        }
    }
    fn alpha_k(&self, k: usize) -> f64 {
        match self {
            Machinery::Mult(l) => l.schedule.at(k),
            Machinery::Add(l) => l.schedule.at(k),
        }
    }
    fn lambda(&self, k: usize, c: Corruption) -> Result<f64> {
        let l = match self {
            Machinery::Mult(l) => l.lambda(k)?,
            Machinery::Add(l) => l.lambda(k),
        };
        Ok(match c {
            Corruption::LambdaScale(s) => s * l,
            _ => l,
        })
    }
    fn drift_scale(c: Corruption) -> f64 {
        match c {
            Corruption::DriftScale(s) => s,
            _ => 1.0,
        }
    }
    /// Supermartingale compensator rate `D₃` / `D̄₅`.
    fn drift(&self, c: Corruption) -> f64 {
        Self::drift_scale(c)
            * match self {
                Machinery::Mult(l) => l.d3,
                Machinery::Add(l) => l.dbar5,
            }
    }
    /// `(contraction factor on λ_k M_k, additive exponent)` of the
    /// one-step conditional MGF recursion at step `k`.
    fn recursion(&self, k: usize, lam_k: f64, c: Corruption) -> (f64, f64) {
        let ak = self.alpha_k(k);
        match self {
            Machinery::Mult(l) => {
                let a = l.alpha();
                let rho = (-(a * l.d0 / 2.0 - 1.0) * ak / a).exp();
                let s = 1.0 + l.xstar_norm;
                (rho, Self::drift_scale(c) * 2.0 * ak * ak * lam_k * l.d2 * s * s)
            }
            Machinery::Add(l) => {
                let f = ak / self.alpha_k(k + 1) * (1.0 - l.dbar1 * ak / 2.0);
                (f, Self::drift_scale(c) * l.dbar5 * ak)
            }
        }
    }
    fn validate(&self) -> Result<()> {
        let ok = match self {
            Machinery::Mult(l) => l.conditions.passed(),
            Machinery::Add(l) => l.conditions.passed(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ConditionViolated(format!("{} ledger fails its stepsize conditions", self.regime())))
        }
    }
}

/// Records `M(x_k − x*)` for `k = 0..=k_end`.
struct MoreauRecorder<'a> {
    cfg: &'a MoreauConfig,
    xstar: &'a [f64],
    k_end: usize,
    diff: Vec<f64>,
    values: Vec<f64>,
    failed: bool,
}

impl TrajectoryVisitor for MoreauRecorder<'_> {
    type Output = (Vec<f64>, Option<usize>);
    fn visit(&mut self, k: usize, x: &[f64], _err: f64) {
        if k > self.k_end || self.failed {
            return;
        }
        for ((d, xi), si) in self.diff.iter_mut().zip(x).zip(self.xstar) {
            *d = xi - si;
        }
        match moreau_eval(self.cfg, &self.diff) {
            Ok(v) => self.values.push(v),
            Err(_) => self.failed = true,
        }
    }
    fn finish(self, fault: Option<usize>) -> Self::Output {
        let fault = fault.or(self.failed.then_some(self.values.len()));
        (self.values, fault)
    }
}

fn simulate<P: SAProblem + ?Sized>(p: &P, m: Machinery, k_end: usize, o: &MachineryOptions) -> Result<Vec<Vec<f64>>> {
    if o.n < 2 {
        return Err(Error::InvalidParameter("machinery checks need n >= 2".into()));
    }
    let cfg = m.moreau();
    if cfg.norm_c.dim != p.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: cfg.norm_c.dim });
    }
    let schedule = match m {
        Machinery::Mult(l) => l.schedule,
        Machinery::Add(l) => l.schedule,
    };
    let out = run_ensemble_visit(p, &schedule, k_end, o.n, o.master_seed, o.workers, |_| MoreauRecorder {
        cfg,
        xstar: p.x_star(),
        k_end,
        diff: vec![0.0; p.dim()],
        values: Vec::with_capacity(k_end + 1),
        failed: false,
    })?;
    let mut all = Vec::with_capacity(o.n);
    for (v, fault) in out {
        if let Some(step) = fault {
            return Err(Error::NonFinite { k: step, what: "iterate or Moreau envelope".into() });
        }
        all.push(v);
    }
    Ok(all)
}

/// Paired comparison of `lhs_i` against `rhs_i`.
fn compare(k: usize, pairs: impl Iterator<Item = (f64, f64)>, n: usize) -> Result<MachineryRow> {
    let (mut sl, mut sr, mut sd, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for (l, r) in pairs {
        if !(l.is_finite() && r.is_finite()) {
            return Err(Error::NonFinite { k, what: "MGF estimate".into() });
        }
        let d = l - r;
        sl += l;
        sr += r;
        sd += d;
        sdd += d * d;
    }
    let nf = n as f64;
    let mean = sd / nf;
    let var = ((sdd - nf * mean * mean) / (nf - 1.0)).max(0.0);
    let se = (var / nf).sqrt();
    let z = if se > 0.0 { mean / se } else if mean > 0.0 { f64::INFINITY } else { 0.0 };
    let pass = mean <= MACHINERY_SE_GATE * se;
    Ok(MachineryRow { k, lhs: sl / nf, rhs: sr / nf, se, z, pass })
}

fn report(check: &str, m: Machinery, o: &MachineryOptions, rows: Vec<MachineryRow>) -> MachineryReport {
    let worst_k = rows.iter().max_by(|a, b| a.z.total_cmp(&b.z)).map(|r| r.k);
    MachineryReport {
        check: check.into(),
        regime: m.regime().into(),
        corruption: o.corruption,
        n: o.n,
        passed: rows.iter().all(|r| r.pass),
        rows,
        worst_k,
    }
}

/// Checks, for every `k` in the range, the total-expectation form of the
/// one-step MGF recursion
/// `E[exp(λ_{k+1} M_{k+1})] ≤ E[exp(f_k λ_k M_k)] · exp(c_k)`
/// on paired Monte Carlo trajectories.
pub fn check_mgf_recursion<P: SAProblem + ?Sized>(p: &P, m: Machinery, o: &MachineryOptions) -> Result<MachineryReport> {
    m.validate()?;
    let (k0, k1) = (*o.k_range.start(), *o.k_range.end());
    if k0 > k1 {
        return Err(Error::InvalidParameter("empty k_range".into()));
    }
    let data = simulate(p, m, k1 + 1, o)?;
    let mut rows = Vec::with_capacity(k1 - k0 + 1);
    for k in k0..=k1 {
        let (lk, lk1) = (m.lambda(k, o.corruption)?, m.lambda(k + 1, o.corruption)?);
        let (f, c) = m.recursion(k, lk, o.corruption);
        let pairs = data.iter().map(|v| ((lk1 * v[k + 1]).exp(), (f * lk * v[k] + c).exp()));
        rows.push(compare(k, pairs, o.n)?);
    }
    Ok(report("mgf_recursion", m, o, rows))
}

/// Checks that `E[M̄_k]` with `M̄_k = exp(λ_k M_k − D Σ_{i<k} α_i)` is
/// nonincreasing across consecutive steps of the range.
pub fn check_supermartingale<P: SAProblem + ?Sized>(p: &P, m: Machinery, o: &MachineryOptions) -> Result<MachineryReport> {
    m.validate()?;
    let (k0, k1) = (*o.k_range.start(), *o.k_range.end());
    if k0 > k1 {
        return Err(Error::InvalidParameter("empty k_range".into()));
    }
    if k0 == k1 {
        return Ok(report("supermartingale", m, o, Vec::new()));
    }
    let data = simulate(p, m, k1, o)?;
    let d = m.drift(o.corruption);
    let mut comp = Vec::with_capacity(k1 + 1);
    let mut acc = 0.0;
    for k in 0..=k1 {
        comp.push(d * acc);
        acc += m.alpha_k(k);
    }
    let lam: Vec<f64> = (0..=k1).map(|k| m.lambda(k, o.corruption)).collect::<Result<_>>()?;
    let bar = |v: &[f64], k: usize| (lam[k] * v[k] - comp[k]).exp();
    let mut rows = Vec::with_capacity(k1 - k0);
    for k in k0..k1 {
        let pairs = data.iter().map(|v| (bar(v, k + 1), bar(v, k)));
        rows.push(compare(k, pairs, o.n)?);
    }
    Ok(report("supermartingale", m, o, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{build_add_ledger, build_mult_ledger, AddInputs, MultInputs};
    use crate::core::{NormSpec, StepSchedule};
    use crate::engine::AffineProblem;
    use crate::hard_example::HardExampleSpec;

    #[test]
    fn corruption_json_form() {
        let c = Corruption::LambdaScale(10.0);
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(j, r#"{"kind":"lambda_scale","factor":10.0}"#);
        assert_eq!(serde_json::from_str::<Corruption>(&j).unwrap(), c);
        assert_eq!(serde_json::from_str::<Corruption>(r#"{"kind":"none"}"#).unwrap(), Corruption::None);
    }

    fn scalar_moreau() -> MoreauConfig {
        MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0).unwrap()
    }

    fn additive(x0: f64) -> (AffineProblem, AddLedger) {
        let l = build_add_ledger(&AddInputs {
            gamma_c: 0.5,
            sigma_bar: 1.0,
            c_d: 1.0,
            x0_err: x0,
            moreau: scalar_moreau(),
            alpha: 4.4,
            h: None,
            z: 1.0,
        })
        .unwrap();
        (AffineProblem::scalar(0.5, 0.0, 1.0, x0).unwrap(), l)
    }

    fn opts(corruption: Corruption) -> MachineryOptions {
        MachineryOptions { n: 20_000, master_seed: 3, corruption, ..Default::default() }
    }

    #[test]
    fn additive_checks_and_controls() {
        let (p, l) = additive(1.0);
        assert!(check_mgf_recursion(&p, Machinery::Add(&l), &opts(Corruption::None)).unwrap().passed);
        assert!(check_supermartingale(&p, Machinery::Add(&l), &opts(Corruption::None)).unwrap().passed);
        let bad = check_mgf_recursion(&p, Machinery::Add(&l), &opts(Corruption::LambdaScale(10.0))).unwrap();
        assert!(!bad.passed && !bad.rows[0].pass);
        let (p, l) = additive(0.0);
        assert!(check_supermartingale(&p, Machinery::Add(&l), &opts(Corruption::None)).unwrap().passed);
        assert!(!check_supermartingale(&p, Machinery::Add(&l), &opts(Corruption::DriftScale(0.01))).unwrap().passed);
    }

    #[test]
    fn multiplicative_checks_pass() {
        let l = build_mult_ledger(&MultInputs {
            gamma_c: 0.5,
            sigma: 1.0,
            x0_err: 1.0,
            xstar_norm: 0.0,
            moreau: scalar_moreau(),
            alpha: 4.0,
            h: None,
        })
        .unwrap();
        let p = HardExampleSpec::new(0.5, 1.0, 1.0, l.schedule).unwrap();
        let r = check_mgf_recursion(&p, Machinery::Mult(&l), &opts(Corruption::None)).unwrap();
        assert!(r.passed && r.rows.len() == 51);
        assert!(check_supermartingale(&p, Machinery::Mult(&l), &opts(Corruption::None)).unwrap().passed);
        let one = MachineryOptions { k_range: 7..=7, ..opts(Corruption::None) };
        let r = check_supermartingale(&p, Machinery::Mult(&l), &one).unwrap();
        assert!(r.passed && r.rows.is_empty());
        // a ledger that fails its stepsize conditions is refused
        let loose = build_mult_ledger(&MultInputs { h: Some(2.0), ..l_inputs() }).unwrap();
        let q = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(0.1, 2.0).unwrap()).unwrap();
        assert!(matches!(
            check_mgf_recursion(&q, Machinery::Mult(&loose), &opts(Corruption::None)),
            Err(Error::ConditionViolated(_))
        ));
    }

    fn l_inputs() -> MultInputs {
        MultInputs {
            gamma_c: 0.5,
            sigma: 1.0,
            x0_err: 1.0,
            xstar_norm: 0.0,
            moreau: scalar_moreau(),
            alpha: 4.0,
            h: None,
        }
    }

    #[test]
    fn paired_comparison() {
        let r = compare(3, [(1.0, 1.0), (2.0, 2.0)].into_iter(), 2).unwrap();
        assert!(r.pass && r.z == 0.0);
        let r = compare(3, [(1.0, 0.0), (1.0, 0.0)].into_iter(), 2).unwrap();
        assert!(!r.pass && r.z.is_infinite());
        let r = compare(3, [(1.0, 0.5), (0.0, 0.4)].into_iter(), 2).unwrap();
        assert!(r.pass);
        assert!(matches!(compare(7, [(f64::INFINITY, 1.0)].into_iter(), 1), Err(Error::NonFinite { k: 7, .. })));
    }
}
