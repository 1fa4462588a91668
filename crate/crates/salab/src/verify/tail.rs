use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{checked_gamma_ur, ln_gamma};

use super::stats::ols;
use crate::core::{derive_stream, SeedSpec};
use crate::engine::quantile_sorted;
use crate::error::{Error, Result};
use rand::Rng;

/// Fewest exceedances a fit accepts.
pub const MIN_TAIL_POINTS: usize = 20;
/// Default bootstrap size.
pub const N_BOOT: usize = 200;

/// Sorted samples; `S(ε) = P(X ≥ ε)` is read off by rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ccdf {
    sorted: Vec<f64>,
}

impl Ccdf {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
    /// `(ε_i, S(ε_i))` at every sample.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.sorted.len() as f64;
        self.sorted.iter().enumerate().map(move |(i, &x)| (x, (n - i as f64) / n))
    }
    /// Empirical `P(X ≥ eps)`.
    pub fn at(&self, eps: f64) -> f64 {
        let i = self.sorted.partition_point(|&x| x < eps);
        (self.sorted.len() - i) as f64 / self.sorted.len() as f64
    }
}

pub fn empirical_ccdf(samples: &[f64]) -> Result<Ccdf> {
    if samples.is_empty() {
        return Err(Error::Degenerate("no samples".into()));
    }
    if samples.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidParameter("samples must be finite and nonnegative".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(Ccdf { sorted })
}

/// Which part of the sample is treated as tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRange {
    /// Samples strictly above this empirical quantile are fitted.
    pub threshold_quantile: f64,
}

impl Default for FitRange {
    fn default() -> Self {
        FitRange { threshold_quantile: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFitOptions {
    pub range: FitRange,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        TailFitOptions { range: FitRange::default(), n_boot: N_BOOT, seed: 0 }
    }
}

/// Fitted `S(ε) ≈ K₁ exp(−K₂ ε^β)` above the threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub beta_hat: f64,
    pub k2_hat: f64,
    pub log_k1_hat: f64,
    /// Of `log S(ε)` regressed on `ε^β̂`.
    pub r_squared: f64,
    /// Percentile bootstrap 95% interval for `β̂` (degenerate when `n_boot = 0`).
    pub ci: (f64, f64),
    pub threshold: f64,
    pub n_points: usize,
    pub n_boot: usize,
}

/// Negative log-likelihood of `t > 1` under the density
/// `∝ t^{d−1} exp(−K t^β)` on `(1, ∞)`, in parameters `(ln β, ln d, ln K)`.
struct TailLik {
    log_t: Vec<f64>,
    sum_log_t: f64,
}

const BAD_COST: f64 = 1e300;

impl TailLik {
    fn new(t: &[f64]) -> Self {
        let log_t: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let sum_log_t = log_t.iter().sum();
        TailLik { log_t, sum_log_t }
    }

    fn nll(&self, p: &[f64]) -> f64 {
        let (beta, d, k) = (p[0].exp(), p[1].exp(), p[2].exp());
        let s = d / beta;
        if !(beta.is_finite() && d.is_finite() && k.is_finite() && s < 1e6 && beta > 1e-6 && k > 1e-300) {
            return BAD_COST;
        }
        let log_z = -s * k.ln() - beta.ln() + ln_upper_gamma(s, k);
        let sum_pow: f64 = self.log_t.iter().map(|l| (beta * l).exp()).sum();
        let n = self.log_t.len() as f64;
        let v = -(d - 1.0) * self.sum_log_t + k * sum_pow + n * log_z;
        if v.is_finite() {
            v
        } else {
            BAD_COST
        }
    }
}

impl CostFunction for &TailLik {
    type Param = Vec<f64>;
    type Output = f64;
    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.nll(p))
    }
}

/// `ln Γ(s, x)`, finite even where the regularised value underflows.
fn ln_upper_gamma(s: f64, x: f64) -> f64 {
    if let Ok(q) = checked_gamma_ur(s, x) {
        if q > 1e-250 {
            return ln_gamma(s) + q.ln();
        }
    }
    // modified Lentz continued fraction, valid for x > s + 1
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    -x + s * x.ln() + h.ln()
}

fn nelder_mead(lik: &TailLik, start: [f64; 3], step: f64) -> Option<(Vec<f64>, f64)> {
    let mut simplex = vec![start.to_vec()];
    for i in 0..3 {
        let mut v = start.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let tol = 1e-12 * lik.log_t.len() as f64;
    let solver = NelderMead::new(simplex).with_sd_tolerance(tol).ok()?;
    let res = Executor::new(lik, solver).configure(|s| s.max_iters(3000)).run().ok()?;
    let st = res.state();
    Some((st.best_param.clone()?, st.best_cost))
}

/// Maximum-likelihood `(β, d, K)` in log coordinates, from several starts or
/// from a warm start.
fn mle(t: &[f64], warm: Option<[f64; 3]>) -> Result<[f64; 3]> {
    let lik = TailLik::new(t);
    let starts: Vec<([f64; 3], f64)> = match warm {
        Some(w) => vec![(w, 0.1)],
        None => [0.5f64, 1.0, 2.0, 3.0]
            .iter()
            .map(|&b| {
                let m = lik.log_t.iter().map(|l| (b * l).exp()).sum::<f64>() / t.len() as f64;
                ([b.ln(), 0.0, -(m - 1.0).max(1e-12).ln()], 0.3)
            })
            .collect(),
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for (s, step) in starts {
        if let Some((p, c)) = nelder_mead(&lik, s, step) {
            if c < BAD_COST && best.as_ref().is_none_or(|b| c < b.1) {
                best = Some((p, c));
            }
        }
    }
    let (p, _) = best.ok_or_else(|| Error::NoConvergence { what: "tail likelihood".into(), iterations: 3000 })?;
    Ok([p[0], p[1], p[2]])
}

/// Threshold and exceedance ratios `t = x/u > 1` of sorted data.
fn exceedances(sorted: &[f64], range: FitRange) -> Result<(f64, Vec<f64>)> {
    let q = range.threshold_quantile;
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("threshold quantile {q} outside [0,1)")));
    }
    let u = quantile_sorted(sorted, q);
    if !(u > 0.0) {
        return Err(Error::Degenerate(format!("tail threshold {u} is not positive")));
    }
    let t: Vec<f64> = sorted.iter().filter(|&&x| x > u).map(|x| x / u).collect();
    if t.len() < MIN_TAIL_POINTS {
        return Err(Error::Degenerate(format!("only {} samples above the threshold {u}", t.len())));
    }
    Ok((u, t))
}

/// Fits the tail exponent `β` of `S(ε) ≈ K₁ exp(−K₂ ε^β)`.
///
/// `β` comes from maximum likelihood on the exceedances over the threshold
/// (the shape `t^{d−1} exp(−K t^β)` absorbs polynomial prefactors); `K₂`,
/// `log K₁` and `r²` then come from least squares of `log S(ε)` on `ε^β̂`.
/// The interval is a percentile bootstrap; resample `b` uses stream `b` of
/// `opts.seed`, so results do not depend on the thread count.
pub fn fit_tail_exponent(ccdf: &Ccdf, opts: &TailFitOptions) -> Result<TailFit> {
    let sorted = ccdf.samples();
    let (u, t) = exceedances(sorted, opts.range)?;
    let p = mle(&t, None)?;
    let beta_hat = p[0].exp();
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        ccdf.points().filter(|&(x, _)| x > u).map(|(x, s)| (x.powf(beta_hat), s.ln())).unzip();
    let (slope, intercept, r2) = ols(&xs, &ys);
    let ci = if opts.n_boot == 0 {
        (beta_hat, beta_hat)
    } else {
        let n = sorted.len();
        let mut boots: Vec<f64> = (0..opts.n_boot as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = derive_stream(SeedSpec::new(opts.seed, b));
                let mut re: Vec<f64> = (0..n).map(|_| sorted[rng.random_range(0..n)]).collect();
                re.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let (_, tb) = exceedances(&re, opts.range).ok()?;
                mle(&tb, Some(p)).ok().map(|q| q[0].exp())
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        if boots.len() < opts.n_boot / 2 {
            return Err(Error::Degenerate("most bootstrap refits failed".into()));
        }
        boots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (quantile_sorted(&boots, 0.025), quantile_sorted(&boots, 0.975))
    };
    Ok(TailFit {
        beta_hat,
        k2_hat: -slope,
        log_k1_hat: intercept,
        r_squared: r2,
        ci,
        threshold: u,
        n_points: t.len(),
        n_boot: opts.n_boot,
    })
}
