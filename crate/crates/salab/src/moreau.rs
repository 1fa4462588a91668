//! The generalized Moreau envelope
//! `M(x) = min_u ½‖u‖_c² + ‖x − u‖_s² / (2μ)`
//! and the smoothing constants derived from it.

use serde::{Deserialize, Serialize};

use crate::core::{norm_equiv_constants, NormKind, NormSpec};
use crate::error::{Error, Result};

/// Upper end of the μ search range used by [`choose_mu`].
pub const MU_MAX: f64 = 1e6;

/// Objective tolerance of the numeric envelope minimisation.
pub const ENVELOPE_TOL: f64 = 1e-10;
const ENVELOPE_BUDGET: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoreauConfig {
    pub norm_c: NormSpec,
    pub norm_s: NormSpec,
    pub mu: f64,
    /// Smoothness constant of `½‖·‖_s²` with respect to `‖·‖_s`.
    pub l_smooth: f64,
    pub l_cs: f64,
    pub u_cs: f64,
    /// Constant with `‖x‖_M ≤ u_{cM,*}‖x‖_{c,*}`.
    pub u_cm_star: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoreauConstants {
    pub l_cm: f64,
    pub u_cm: f64,
    pub gamma_tilde: f64,
}

impl MoreauConfig {
    /// Builds a configuration, computing `ℓ_cs`, `u_cs`, `L` and `u_{cM,*}`.
    ///
    /// The smoothing norm must make `½‖·‖_s²` smooth, which rules out the
    /// max-norm.
    pub fn new(norm_c: NormSpec, norm_s: NormSpec, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        let l_smooth = match &norm_s.kind {
            NormKind::Euclidean | NormKind::WeightedQuadratic { .. } => 1.0,
            NormKind::PNorm { p } => p - 1.0,
            NormKind::MaxNorm => {
                return Err(Error::Unsupported("max-norm is not a smoothing norm".into()));
            }
        };
        let (l_cs, u_cs) = norm_equiv_constants(&norm_c, &norm_s)?;
        let dual = norm_c.dual()?;
        let (_, u_c_dual) = norm_equiv_constants(&norm_c, &dual)?;
        let l_cm = (1.0 + mu * l_cs * l_cs).sqrt();
        Ok(MoreauConfig { norm_c, norm_s, mu, l_smooth, l_cs, u_cs, u_cm_star: u_c_dual / l_cm })
    }

    /// The ℓ_∞ / ℓ_p configuration used for Q-learning, with
    /// `p = 2 ln d`, `ℓ_cs = e^{-1/2}`, `u_cs = 1`, `L = p − 1`,
    /// `μ = ((1+γ̂)/(2γ̂))² − 1` and `u_{cM,*} = √e`.
    pub fn q_learning_recipe(dim: usize, gamma_hat: f64) -> Result<Self> {
        let p = 2.0 * (dim as f64).ln();
        let norm_s = NormSpec::p_norm(dim, p).map_err(|_| {
            Error::InvalidParameter(format!("recipe needs 2 ln d >= 2, i.e. d >= 3 (got d = {dim})"))
        })?;
        let mu = q_learning_mu(gamma_hat)?;
        let mut cfg = MoreauConfig::new(NormSpec::max_norm(dim), norm_s, mu)?;
        cfg.u_cm_star = 1f64.exp().sqrt();
        Ok(cfg)
    }

    pub fn constants(&self, gamma_c: f64) -> MoreauConstants {
        moreau_constants(self, gamma_c)
    }

    pub fn l_cm(&self) -> f64 {
        (1.0 + self.mu * self.l_cs * self.l_cs).sqrt()
    }

    pub fn u_cm(&self) -> f64 {
        (1.0 + self.mu * self.u_cs * self.u_cs).sqrt()
    }
}

/// `ℓ_cM`, `u_cM` and `γ̃_c = γ_c u_cM / ℓ_cM`.
pub fn moreau_constants(cfg: &MoreauConfig, gamma_c: f64) -> MoreauConstants {
    let l_cm = cfg.l_cm();
    let u_cm = cfg.u_cm();
    MoreauConstants { l_cm, u_cm, gamma_tilde: gamma_c * u_cm / l_cm }
}

/// μ from the Q-learning recipe, `((1+γ̂)/(2γ̂))² − 1`.
pub fn q_learning_mu(gamma_hat: f64) -> Result<f64> {
    if !(gamma_hat > 0.0 && gamma_hat < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_hat must lie in (0,1), got {gamma_hat}")));
    }
    Ok(((1.0 + gamma_hat) / (2.0 * gamma_hat)).powi(2) - 1.0)
}

/// Largest μ in `(0, MU_MAX]` with `γ̃_c ≤ target` (default `(1+γ_c)/2`).
///
/// `γ̃_c(μ) = γ_c √((1+μu²)/(1+μℓ²))` is increasing in μ, so the boundary is
/// available in closed form; it is nudged down until the re-evaluated `γ̃_c`
/// sits at or under the target despite rounding.
pub fn choose_mu(norm_c: &NormSpec, norm_s: &NormSpec, gamma_c: f64, target: Option<f64>) -> Result<f64> {
    if !(gamma_c >= 0.0 && gamma_c < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_c must lie in [0,1), got {gamma_c}")));
    }
    let target = target.unwrap_or((1.0 + gamma_c) / 2.0);
    if !(target > gamma_c && target < 1.0) {
        return Err(Error::InvalidParameter(format!("target {target} must lie in (gamma_c, 1)")));
    }
    let (l, u) = norm_equiv_constants(norm_c, norm_s)?;
    if gamma_c == 0.0 {
        return Ok(MU_MAX);
    }
    let gt = |mu: f64| gamma_c * ((1.0 + mu * u * u) / (1.0 + mu * l * l)).sqrt();
    let r = (target / gamma_c).powi(2);
    let denom = u * u - r * l * l;
    if denom <= 0.0 {
        return Ok(MU_MAX);
    }
    let mut mu = ((r - 1.0) / denom).min(MU_MAX);
    while gt(mu) > target {
        mu *= 1.0 - 1e-12;
    }
    Ok(mu)
}

/// Envelope value. Uses the closed form when `c = s`, otherwise the numeric
/// minimiser of [`moreau_eval_numeric`].
pub fn moreau_eval(cfg: &MoreauConfig, x: &[f64]) -> Result<f64> {
    if x.len() != cfg.norm_c.dim {
        return Err(Error::DimensionMismatch { expected: cfg.norm_c.dim, got: x.len() });
    }
    if x.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    if cfg.norm_c == cfg.norm_s {
        let n = cfg.norm_c.eval(x);
        return Ok(n * n / (2.0 * (1.0 + cfg.mu)));
    }
    moreau_eval_numeric(cfg, x)
}

/// Envelope value by numeric minimisation, never taking the `c = s`
/// shortcut.
///
/// * `c` = max-norm, `s` = ℓ_p: exact reduction to a scalar convex problem in
///   `t = ‖u‖_∞` (the inner problem is solved by clipping `x` to `[-t, t]`).
/// * both `½‖·‖_c²` and `½‖·‖_s²` smooth: gradient descent with Armijo
///   backtracking.
pub fn moreau_eval_numeric(cfg: &MoreauConfig, x: &[f64]) -> Result<f64> {
    if x.len() != cfg.norm_c.dim {
        return Err(Error::DimensionMismatch { expected: cfg.norm_c.dim, got: x.len() });
    }
    if x.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    match (&cfg.norm_c.kind, cfg.norm_s.lp_exponent()) {
        (NormKind::MaxNorm, Some(p)) if p.is_finite() => Ok(max_lp_envelope(x, p, cfg.mu)),
        _ if cfg.norm_c.is_smooth() && cfg.norm_s.is_smooth() => smooth_envelope(cfg, x),
        _ => Err(Error::Unsupported(format!(
            "no numeric envelope for c = {:?}, s = {:?}",
            cfg.norm_c.kind, cfg.norm_s.kind
        ))),
    }
}

/// `min_t ½t² + (1/2μ)(Σ(|x_i|−t)_+^p)^{2/p}` by bisection on the monotone
/// derivative.
fn max_lp_envelope(x: &[f64], p: f64, mu: f64) -> f64 {
    let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // work with x / xmax, then rescale by xmax² (M is 2-homogeneous)
    let a: Vec<f64> = x.iter().map(|v| v.abs() / xmax).collect();
    let excess = |t: f64| -> (f64, f64) {
        let (mut s, mut s1) = (0.0, 0.0);
        for &ai in &a {
            let e = ai - t;
            if e > 0.0 {
                s += e.powf(p);
                s1 += e.powf(p - 1.0);
            }
        }
        (s, s1)
    };
    let g = |t: f64| {
        let (s, _) = excess(t);
        0.5 * t * t + s.powf(2.0 / p) / (2.0 * mu)
    };
    let dg = |t: f64| {
        let (s, s1) = excess(t);
        if s == 0.0 {
            t
        } else {
            t - s.powf(2.0 / p - 1.0) * s1 / mu
        }
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dg(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-17 {
            break;
        }
    }
    let t = 0.5 * (lo + hi);
    g(t).min(g(lo)).min(g(hi)) * xmax * xmax
}

fn smooth_envelope(cfg: &MoreauConfig, x: &[f64]) -> Result<f64> {
    let d = x.len();
    let mu = cfg.mu;
    let obj = |u: &[f64], diff: &mut [f64]| {
        for i in 0..d {
            diff[i] = x[i] - u[i];
        }
        let a = cfg.norm_c.eval(u);
        let b = cfg.norm_s.eval(diff);
        0.5 * a * a + b * b / (2.0 * mu)
    };
    let mut diff = vec![0.0; d];
    let mut gc = vec![0.0; d];
    let mut gs = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut u: Vec<f64> = x.iter().map(|v| v / (1.0 + mu)).collect();
    let mut trial = vec![0.0; d];
    let mut f = obj(&u, &mut diff);
    let scale = cfg.norm_c.eval(x).powi(2).max(f64::MIN_POSITIVE);
    let mut step = 1.0 / (1.0 + cfg.l_smooth / mu);
    let mut stalls = 0;
    for _ in 0..ENVELOPE_BUDGET {
        for i in 0..d {
            diff[i] = x[i] - u[i];
        }
        cfg.norm_c.grad_half_sq(&u, &mut gc);
        cfg.norm_s.grad_half_sq(&diff, &mut gs);
        let mut gn2 = 0.0;
        for i in 0..d {
            grad[i] = gc[i] - gs[i] / mu;
            gn2 += grad[i] * grad[i];
        }
        if gn2 <= (1e-15 * scale.sqrt()).powi(2) {
            return Ok(f);
        }
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..d {
                trial[i] = u[i] - step * grad[i];
            }
            let ft = obj(&trial, &mut diff);
            if ft <= f - 0.5 * step * gn2 {
                let decrease = f - ft;
                u.copy_from_slice(&trial);
                f = ft;
                accepted = true;
                if decrease <= 1e-3 * ENVELOPE_TOL * scale {
                    stalls += 1;
                } else {
                    stalls = 0;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted || stalls >= 5 {
            return Ok(f);
        }
    }
    Err(Error::NoConvergence { what: "Moreau envelope minimisation".into(), iterations: ENVELOPE_BUDGET })
}
