use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which norm a [`NormSpec`] evaluates.
///
/// `PNorm` is restricted to `p ≥ 2` at construction; exponents in `[1, 2)`
/// only arise as duals and are built through [`NormSpec::dual`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    Euclidean,
    MaxNorm,
    PNorm { p: f64 },
    WeightedQuadratic { p_matrix: DMatrix<f64> },
}

/// A norm on `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    pub dim: usize,
}

/// Number of random directions used when an equivalence constant has no
/// closed form.
pub const EQUIV_SAMPLE_BUDGET: usize = 20_000;
/// Conservative widening applied to sampled equivalence constants.
pub const EQUIV_WIDENING: f64 = 1.01;

impl NormSpec {
    pub fn euclidean(dim: usize) -> Self {
        NormSpec { kind: NormKind::Euclidean, dim }
    }

    pub fn max_norm(dim: usize) -> Self {
        NormSpec { kind: NormKind::MaxNorm, dim }
    }

    pub fn p_norm(dim: usize, p: f64) -> Result<Self> {
        if !(p.is_finite() && p >= 2.0) {
            return Err(Error::InvalidParameter(format!("p-norm needs finite p >= 2, got {p}")));
        }
        Ok(NormSpec { kind: NormKind::PNorm { p }, dim })
    }

    /// Weighted quadratic norm `(xᵀPx)^{1/2}`. `P` is symmetrised and must be
    /// positive definite.
    pub fn weighted(p_matrix: DMatrix<f64>) -> Result<Self> {
        if !p_matrix.is_square() {
            return Err(Error::InvalidParameter("weight matrix must be square".into()));
        }
        let dim = p_matrix.nrows();
        let sym = (&p_matrix + p_matrix.transpose()) * 0.5;
        let asym = (&p_matrix - &sym).norm();
        if asym > 1e-9 * (1.0 + sym.norm()) {
            return Err(Error::InvalidParameter(format!("weight matrix not symmetric (asymmetry {asym:e})")));
        }
        let lmin = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if !(lmin > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("lambda_min = {lmin:e}")));
        }
        Ok(NormSpec { kind: NormKind::WeightedQuadratic { p_matrix: sym }, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Norm value. Debug builds assert the dimension; use [`NormSpec::try_eval`]
    /// for a checked call.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            NormKind::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormKind::MaxNorm => x.iter().fold(0.0, |m, v| m.max(v.abs())),
            NormKind::PNorm { p } => p_norm_value(x, *p),
            NormKind::WeightedQuadratic { p_matrix } => {
                let d = self.dim;
                let mut q = 0.0;
                for i in 0..d {
                    let mut row = 0.0;
                    for j in 0..d {
                        row += p_matrix[(i, j)] * x[j];
                    }
                    q += x[i] * row;
                }
                q.max(0.0).sqrt()
            }
        }
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(self.eval(x))
    }

    /// Norm of `x - y` without allocating.
    pub fn dist(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match &self.kind {
            NormKind::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
            NormKind::MaxNorm => x.iter().zip(y).fold(0.0, |m, (a, b)| m.max((a - b).abs())),
            _ => {
                let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                self.eval(&diff)
            }
        }
    }

    /// The dual norm `‖·‖_*`.
    pub fn dual(&self) -> Result<NormSpec> {
        let kind = match &self.kind {
            NormKind::Euclidean => NormKind::Euclidean,
            NormKind::MaxNorm => NormKind::PNorm { p: 1.0 },
            NormKind::PNorm { p } => {
                if *p == 1.0 {
                    NormKind::MaxNorm
                } else {
                    NormKind::PNorm { p: *p / (*p - 1.0) }
                }
            }
            NormKind::WeightedQuadratic { p_matrix } => {
                let inv = p_matrix
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".into()))?
                    .inverse();
                NormKind::WeightedQuadratic { p_matrix: (&inv + inv.transpose()) * 0.5 }
            }
        };
        Ok(NormSpec { kind, dim: self.dim })
    }

    /// `ℓ_p` exponent when the norm is one (`∞` for the max-norm).
    pub fn lp_exponent(&self) -> Option<f64> {
        match &self.kind {
            NormKind::Euclidean => Some(2.0),
            NormKind::MaxNorm => Some(f64::INFINITY),
            NormKind::PNorm { p } => Some(*p),
            NormKind::WeightedQuadratic { .. } => None,
        }
    }

    /// Whether `½‖·‖²` is continuously differentiable.
    pub fn is_smooth(&self) -> bool {
        match &self.kind {
            NormKind::MaxNorm => false,
            NormKind::PNorm { p } => *p >= 2.0,
            _ => true,
        }
    }

    /// Gradient of `½‖x‖²` written into `out`. Only valid for smooth norms.
    pub fn grad_half_sq(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            NormKind::Euclidean => out.copy_from_slice(x),
            NormKind::PNorm { p } => {
                let n = p_norm_value(x, *p);
                if n == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                for (o, &v) in out.iter_mut().zip(x) {
                    // ‖x‖^{2-p} |x_i|^{p-1} sign(x_i), computed relative to ‖x‖ for range safety
                    *o = n * (v.abs() / n).powf(p - 1.0) * v.signum();
                }
            }
            NormKind::WeightedQuadratic { p_matrix } => {
                for i in 0..self.dim {
                    out[i] = (0..self.dim).map(|j| p_matrix[(i, j)] * x[j]).sum();
                }
            }
            NormKind::MaxNorm => {
                // a subgradient: concentrate on the first maximal coordinate
                out.iter_mut().for_each(|o| *o = 0.0);
                if let Some((i, v)) = x
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
                {
                    out[i] = *v;
                }
            }
        }
    }

    pub fn weight_matrix(&self) -> Option<&DMatrix<f64>> {
        match &self.kind {
            NormKind::WeightedQuadratic { p_matrix } => Some(p_matrix),
            _ => None,
        }
    }
}

fn p_norm_value(x: &[f64], p: f64) -> f64 {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    // scale by the max entry so large p cannot overflow
    let s: f64 = x.iter().map(|v| (v.abs() / m).powf(p)).sum();
    m * s.powf(1.0 / p)
}

/// Constants `(ℓ, u)` with `ℓ‖x‖_s ≤ ‖x‖_c ≤ u‖x‖_s`.
///
/// Exact for identical norms, any pair of `ℓ_p` norms (including the
/// Euclidean and max norms), and weighted/Euclidean or weighted/weighted
/// pairs. Other pairs are estimated by sampling [`EQUIV_SAMPLE_BUDGET`]
/// directions and widened by [`EQUIV_WIDENING`].
pub fn norm_equiv_constants(c: &NormSpec, s: &NormSpec) -> Result<(f64, f64)> {
    if c.dim != s.dim {
        return Err(Error::DimensionMismatch { expected: c.dim, got: s.dim });
    }
    if c == s {
        return Ok((1.0, 1.0));
    }
    let d = c.dim as f64;
    if let (Some(a), Some(b)) = (c.lp_exponent(), s.lp_exponent()) {
        let e = inv(a) - inv(b);
        let f = d.powf(e);
        return Ok(if a >= b { (f, 1.0) } else { (1.0, f) });
    }
    match (&c.kind, &s.kind) {
        (NormKind::WeightedQuadratic { p_matrix }, NormKind::Euclidean) => {
            let ev = SymmetricEigen::new(p_matrix.clone()).eigenvalues;
            Ok((ev.min().sqrt(), ev.max().sqrt()))
        }
        (NormKind::Euclidean, NormKind::WeightedQuadratic { p_matrix }) => {
            let ev = SymmetricEigen::new(p_matrix.clone()).eigenvalues;
            Ok((1.0 / ev.max().sqrt(), 1.0 / ev.min().sqrt()))
        }
        (NormKind::WeightedQuadratic { p_matrix: pc }, NormKind::WeightedQuadratic { p_matrix: ps }) => {
            let ev = generalized_eigenvalues(pc, ps)?;
            Ok((ev.min().sqrt(), ev.max().sqrt()))
        }
        _ => Ok(sampled_equiv(c, s, EQUIV_SAMPLE_BUDGET, 0x5eed_0e9u64)),
    }
}

fn inv(p: f64) -> f64 {
    if p.is_infinite() {
        0.0
    } else {
        1.0 / p
    }
}

/// Eigenvalues of `P v = λ Q v` for SPD `P`, `Q`.
pub(crate) fn generalized_eigenvalues(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let l = q
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("weight matrix".into()))?
        .l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite("cholesky factor".into()))?;
    let m = &linv * p * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(m).eigenvalues)
}

fn sampled_equiv(c: &NormSpec, s: &NormSpec, budget: usize, seed: u64) -> (f64, f64) {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = c.dim;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    let mut consider = |x: &[f64]| {
        let ns = s.eval(x);
        if ns > 0.0 {
            let r = c.eval(x) / ns;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    };
    // coordinate axes and the all-ones direction are the usual extremisers
    let mut x = vec![0.0; d];
    for i in 0..d {
        x.iter_mut().for_each(|v| *v = 0.0);
        x[i] = 1.0;
        consider(&x);
    }
    consider(&vec![1.0; d]);
    for _ in 0..budget {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        consider(&x);
    }
    (lo / EQUIV_WIDENING, hi * EQUIV_WIDENING)
}
