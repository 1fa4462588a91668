//! The SA recursion `x_{k+1} = x_k + α_k (F(x_k, Y_k) − x_k)`, the problem
//! abstraction it runs on, and seeded (worker-count independent) ensembles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::core::{derive_stream, NormSpec, SeedSpec, StepSchedule, StreamRng};
use crate::error::{Error, Result};

/// Noise class of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    /// `‖F(x,Y) − F̄(x)‖_c ≤ σ(1 + ‖x‖_c)` almost surely.
    Multiplicative { sigma: f64 },
    /// Sub-Gaussian noise with variance proxy `σ̄²` and dimension factor `c_d`.
    AdditiveSubgaussian { sigma_bar: f64, c_d: f64 },
}

/// A random fixed-point problem `F̄(x) = E[F(x, Y)] = x`.
pub trait SAProblem: Send + Sync {
    fn dim(&self) -> usize;
    /// One draw of `F(x, Y)` with fresh `Y`, written into `out`.
    fn sample_op(&self, x: &[f64], rng: &mut StreamRng, out: &mut [f64]);
    /// Exact `F̄(x)`, written into `out`.
    fn expected_op(&self, x: &[f64], out: &mut [f64]);
    fn norm_c(&self) -> &NormSpec;
    fn gamma_c(&self) -> f64;
    fn noise(&self) -> NoiseModel;
    fn x_star(&self) -> &[f64];
    fn x0(&self) -> &[f64];
    fn name(&self) -> String;
    /// Whether `F̄` is a contraction everywhere, or only towards `x*`.
    fn global_contraction(&self) -> bool {
        true
    }
    /// Whether the noise draws come from an exact law (as opposed to an
    /// estimated expectation), i.e. whether almost-sure audits apply.
    fn is_exact(&self) -> bool {
        true
    }
}

/// One SA step, in place: `x ← x + α_k (F(x,Y) − x)`. `buf` is scratch of
/// length `d`.
pub fn sa_step<P: SAProblem + ?Sized>(
    p: &P,
    x: &mut [f64],
    alpha_k: f64,
    rng: &mut StreamRng,
    buf: &mut [f64],
) -> Result<()> {
    if !(alpha_k > 0.0 && alpha_k <= 1.0) {
        return Err(Error::InvalidParameter(format!("stepsize must lie in (0, 1], got {alpha_k}")));
    }
    step_unchecked(p, x, alpha_k, rng, buf);
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::TrajectoryFault { stream: 0, step: 0 })
    }
}

#[inline]
fn step_unchecked<P: SAProblem + ?Sized>(p: &P, x: &mut [f64], a: f64, rng: &mut StreamRng, buf: &mut [f64]) {
    p.sample_op(x, rng, buf);
    for (xi, fi) in x.iter_mut().zip(buf.iter()) {
        *xi += a * (fi - *xi);
    }
}

/// Per-trajectory error record `‖x_k − x*‖_c`, `k = 0..=k_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub k_max: usize,
    pub errors: Vec<f64>,
    pub seed: SeedSpec,
}

/// Receives the iterates of one trajectory. One visitor is built per
/// trajectory, so visitors never share state.
pub trait TrajectoryVisitor {
    type Output: Send;
    fn visit(&mut self, k: usize, x: &[f64], err: f64);
    /// `fault` is the first step with a non-finite iterate, if any.
    fn finish(self, fault: Option<usize>) -> Self::Output;
}

/// Runs one trajectory with an arbitrary stepsize sequence, feeding every
/// iterate (including `x_0`) to `visitor`.
pub fn drive_trajectory<P, S, V>(p: &P, stepsize: S, k_max: usize, seed: SeedSpec, mut visitor: V) -> V::Output
where
    P: SAProblem + ?Sized,
    S: Fn(usize) -> f64,
    V: TrajectoryVisitor,
{
    let mut rng = derive_stream(seed);
    let norm = p.norm_c();
    let xs = p.x_star();
    let mut x = p.x0().to_vec();
    let mut buf = vec![0.0; p.dim()];
    visitor.visit(0, &x, norm.dist(&x, xs));
    for k in 0..k_max {
        step_unchecked(p, &mut x, stepsize(k), &mut rng, &mut buf);
        if !x.iter().all(|v| v.is_finite()) {
            return visitor.finish(Some(k + 1));
        }
        visitor.visit(k + 1, &x, norm.dist(&x, xs));
    }
    visitor.finish(None)
}

struct ErrorRecorder {
    errors: Vec<f64>,
    iterates: Option<Vec<Vec<f64>>>,
}

impl TrajectoryVisitor for ErrorRecorder {
    type Output = (Vec<f64>, Option<Vec<Vec<f64>>>, Option<usize>);
    fn visit(&mut self, _k: usize, x: &[f64], err: f64) {
        self.errors.push(err);
        if let Some(it) = self.iterates.as_mut() {
            it.push(x.to_vec());
        }
    }
    fn finish(self, fault: Option<usize>) -> Self::Output {
        (self.errors, self.iterates, fault)
    }
}

fn check_schedule(s: &StepSchedule) -> Result<()> {
    if s.alpha0() > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha_0 = {} exceeds 1; the recursion needs alpha_k in (0, 1]",
            s.alpha0()
        )));
    }
    Ok(())
}

pub fn run_trajectory<P: SAProblem + ?Sized>(p: &P, s: &StepSchedule, k_max: usize, seed: SeedSpec) -> Result<Trajectory> {
    check_schedule(s)?;
    run_trajectory_with(p, |k| s.at(k), k_max, seed)
}

/// Like [`run_trajectory`] with an explicit stepsize sequence.
pub fn run_trajectory_with<P, S>(p: &P, stepsize: S, k_max: usize, seed: SeedSpec) -> Result<Trajectory>
where
    P: SAProblem + ?Sized,
    S: Fn(usize) -> f64,
{
    let rec = ErrorRecorder { errors: Vec::with_capacity(k_max + 1), iterates: None };
    let (errors, _, fault) = drive_trajectory(p, stepsize, k_max, seed, rec);
    match fault {
        Some(step) => Err(Error::TrajectoryFault { stream: seed.stream_index, step }),
        None => Ok(Trajectory { k_max, errors, seed }),
    }
}

/// Parallelism settings for ensembles. Results never depend on `workers`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
    /// Keep full iterates, not only errors.
    pub record_iterates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub stream: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub k_max: usize,
    pub master_seed: u64,
    pub schedule: StepSchedule,
    pub problem: String,
    /// `errors[i][k] = ‖x_k − x*‖_c` for trajectory `i`; faulted
    /// trajectories stop at their fault and are listed in `faults`.
    pub errors: Vec<Vec<f64>>,
    pub iterates: Option<Vec<Vec<Vec<f64>>>>,
    pub faults: Vec<FaultRecord>,
}

impl EnsembleResult {
    pub fn n(&self) -> usize {
        self.errors.len()
    }

    /// Error if any trajectory faulted.
    pub fn ensure_no_faults(&self) -> Result<()> {
        if self.faults.is_empty() {
            Ok(())
        } else {
            Err(Error::EnsembleFault {
                count: self.faults.len(),
                indices: self.faults.iter().take(16).map(|f| f.stream).collect(),
            })
        }
    }

    /// Errors at step `k` across trajectories that reached it.
    pub fn errors_at(&self, k: usize) -> Vec<f64> {
        self.errors.iter().filter_map(|e| e.get(k).copied()).collect()
    }

    /// Per-`k` empirical quantiles `(q05, q50, q95, max)` of the error.
    pub fn quantile_envelope(&self) -> Vec<[f64; 4]> {
        (0..=self.k_max)
            .map(|k| {
                let mut v = self.errors_at(k);
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if v.is_empty() {
                    return [f64::NAN; 4];
                }
                [quantile_sorted(&v, 0.05), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.95), *v.last().unwrap()]
            })
            .collect()
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - f) + v[i + 1] * f
    } else {
        v[i]
    }
}

/// Runs `n` visitors in parallel, trajectory `i` on stream `i`; outputs in
/// stream order.
pub fn run_ensemble_visit<P, V, M>(
    p: &P,
    s: &StepSchedule,
    k_max: usize,
    n: usize,
    master_seed: u64,
    workers: Option<usize>,
    make: M,
) -> Result<Vec<V::Output>>
where
    P: SAProblem + ?Sized,
    V: TrajectoryVisitor,
    M: Fn(u64) -> V + Sync + Send,
{
    check_schedule(s)?;
    if n == 0 {
        return Err(Error::InvalidParameter("ensemble size must be >= 1".into()));
    }
    let job = || {
        (0..n as u64)
            .into_par_iter()
            .map(|i| drive_trajectory(p, |k| s.at(k), k_max, SeedSpec::new(master_seed, i), make(i)))
            .collect::<Vec<_>>()
    };
    Ok(match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(job),
        None => job(),
    })
}

pub fn run_ensemble<P: SAProblem + ?Sized>(
    p: &P,
    s: &StepSchedule,
    k_max: usize,
    n: usize,
    master_seed: u64,
    opts: EnsembleOptions,
) -> Result<EnsembleResult> {
    let rec = opts.record_iterates;
    let out = run_ensemble_visit(p, s, k_max, n, master_seed, opts.workers, |_| ErrorRecorder {
        errors: Vec::with_capacity(k_max + 1),
        iterates: rec.then(Vec::new),
    })?;
    let mut errors = Vec::with_capacity(n);
    let mut iterates = rec.then(Vec::new);
    let mut faults = Vec::new();
    for (i, (e, it, fault)) in out.into_iter().enumerate() {
        if let Some(step) = fault {
            faults.push(FaultRecord { stream: i as u64, step });
        }
        errors.push(e);
        if let (Some(all), Some(it)) = (iterates.as_mut(), it) {
            all.push(it);
        }
    }
    Ok(EnsembleResult { k_max, master_seed, schedule: *s, problem: p.name(), errors, iterates, faults })
}

/// Banach iteration `x ← F̄(x)` from 0 until `‖F̄(x) − x‖_c ≤ tol(1 − γ_c)`.
pub fn solve_fixed_point<F>(expected_op: F, dim: usize, norm_c: &NormSpec, gamma_c: f64, tol: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    if !(gamma_c < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_c must be < 1, got {gamma_c}")));
    }
    let target = tol * (1.0 - gamma_c);
    let mut x = vec![0.0; dim];
    let mut fx = vec![0.0; dim];
    // geometric convergence: the residual shrinks by γ_c per sweep
    let budget = 10_000_000usize;
    for _ in 0..budget {
        expected_op(&x, &mut fx);
        let r = norm_c.dist(&fx, &x);
        std::mem::swap(&mut x, &mut fx);
        if r <= target {
            return Ok(x);
        }
        if !r.is_finite() {
            break;
        }
    }
    Err(Error::NoConvergence { what: "fixed-point iteration".into(), iterations: budget })
}

/// `F(x, Y) = Gx + c + W`, `W ~ N(0, s²I)`: a linear contraction with
/// Gaussian additive noise.
#[derive(Clone, Debug)]
pub struct AffineProblem {
    g: DMatrix<f64>,
    c: DVector<f64>,
    noise_std: f64,
    norm_c: NormSpec,
    gamma_c: f64,
    x_star: Vec<f64>,
    x0: Vec<f64>,
}

impl AffineProblem {
    /// Euclidean-norm instance; `γ_c` is the spectral norm of `G`.
    pub fn new(g: DMatrix<f64>, c: DVector<f64>, noise_std: f64, x0: Vec<f64>) -> Result<Self> {
        let d = g.nrows();
        if !g.is_square() || c.len() != d || x0.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        let gamma_c = g.clone().svd(false, false).singular_values.max();
        if !(gamma_c < 1.0) {
            return Err(Error::Assumption(format!("‖G‖₂ = {gamma_c} is not a contraction")));
        }
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidParameter("noise_std must be >= 0".into()));
        }
        let id = DMatrix::<f64>::identity(d, d);
        let xs = (id - &g)
            .lu()
            .solve(&c)
            .ok_or_else(|| Error::Degenerate("I − G singular".into()))?;
        Ok(AffineProblem { g, c, noise_std, norm_c: NormSpec::euclidean(d), gamma_c, x_star: xs.as_slice().to_vec(), x0 })
    }

    /// One-dimensional `F(x,Y) = γx + c + sW`.
    pub fn scalar(gamma: f64, c: f64, noise_std: f64, x0: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, gamma), DVector::from_element(1, c), noise_std, vec![x0])
    }
}

impl SAProblem for AffineProblem {
    fn dim(&self) -> usize {
        self.c.len()
    }
    fn sample_op(&self, x: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        self.expected_op(x, out);
        if self.noise_std > 0.0 {
            for o in out.iter_mut() {
                *o += self.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    fn expected_op(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for i in 0..d {
            out[i] = self.c[i] + (0..d).map(|j| self.g[(i, j)] * x[j]).sum::<f64>();
        }
    }
    fn norm_c(&self) -> &NormSpec {
        &self.norm_c
    }
    fn gamma_c(&self) -> f64 {
        self.gamma_c
    }
    fn noise(&self) -> NoiseModel {
        // E‖W‖₂² = d s², and ⟨λ, W⟩ ~ N(0, s²‖λ‖²)
        NoiseModel::AdditiveSubgaussian { sigma_bar: self.noise_std, c_d: self.dim() as f64 }
    }
    fn x_star(&self) -> &[f64] {
        &self.x_star
    }
    fn x0(&self) -> &[f64] {
        &self.x0
    }
    fn name(&self) -> String {
        format!("affine(d={}, gamma_c={}, noise_std={})", self.dim(), self.gamma_c, self.noise_std)
    }
}

/// Outcome of [`audit_assumptions`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionAudit {
    /// Largest observed `‖F̄(x₁) − F̄(x₂)‖_c / ‖x₁ − x₂‖_c` (or towards `x*`).
    pub max_contraction_ratio: f64,
    pub contraction_ok: bool,
    /// Largest |z|-score of the Monte Carlo mean of `F(x,·)` against `F̄(x)`.
    pub max_abs_z: f64,
    pub unbiased_ok: bool,
    /// Largest `‖F(x,Y) − F̄(x)‖_c / (1 + ‖x‖_c)` (multiplicative problems).
    pub max_noise_ratio: Option<f64>,
    pub noise_ok: bool,
}

impl AssumptionAudit {
    pub fn passed(&self) -> bool {
        self.contraction_ok && self.unbiased_ok && self.noise_ok
    }
}

/// Checks contraction, unbiasedness (4 standard errors) and, for
/// multiplicative noise, the almost-sure noise bound, at random probes
/// `x* + scale·N(0, I)`.
pub fn audit_assumptions<P: SAProblem + ?Sized>(
    p: &P,
    n_probes: usize,
    mean_probes: usize,
    draws_per_probe: usize,
    scale: f64,
    seed: u64,
) -> AssumptionAudit {
    let d = p.dim();
    let mut rng = derive_stream(SeedSpec::new(seed, u64::MAX));
    let xs = p.x_star().to_vec();
    let norm = p.norm_c();
    let probe = |rng: &mut StreamRng| -> Vec<f64> {
        xs.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    let (mut f1, mut f2, mut fy) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    let mut max_ratio = 0.0f64;
    let mut contraction_ok = true;
    for _ in 0..n_probes {
        let x1 = probe(&mut rng);
        let x2 = if p.global_contraction() { probe(&mut rng) } else { xs.clone() };
        p.expected_op(&x1, &mut f1);
        p.expected_op(&x2, &mut f2);
        let den = norm.dist(&x1, &x2);
        if den > 0.0 {
            let r = norm.dist(&f1, &f2) / den;
            max_ratio = max_ratio.max(r);
            if r > p.gamma_c() + 1e-9 {
                contraction_ok = false;
            }
        }
    }

    let mut max_noise: Option<f64> = None;
    let mut noise_ok = true;
    if let NoiseModel::Multiplicative { sigma } = p.noise() {
        let mut m = 0.0f64;
        for _ in 0..n_probes {
            let x = probe(&mut rng);
            p.expected_op(&x, &mut f1);
            let bound = 1.0 + norm.eval(&x);
            for _ in 0..8 {
                p.sample_op(&x, &mut rng, &mut fy);
                let r = norm.dist(&fy, &f1) / bound;
                m = m.max(r);
                if r > sigma * (1.0 + 1e-12) + 1e-12 {
                    noise_ok = false;
                }
            }
        }
        max_noise = Some(m);
    }

    let mut max_z = 0.0f64;
    let mut unbiased_ok = true;
    for _ in 0..mean_probes {
        let x = probe(&mut rng);
        p.expected_op(&x, &mut f1);
        let mut sum = vec![0.0; d];
        let mut sumsq = vec![0.0; d];
        for _ in 0..draws_per_probe {
            p.sample_op(&x, &mut rng, &mut fy);
            for i in 0..d {
                let dev = fy[i] - f1[i];
                sum[i] += dev;
                sumsq[i] += dev * dev;
            }
        }
        let nf = draws_per_probe as f64;
        for i in 0..d {
            let mean = sum[i] / nf;
            let var = (sumsq[i] / nf - mean * mean).max(0.0);
            let se = (var / (nf - 1.0)).sqrt();
            if se == 0.0 {
                if mean.abs() > 1e-12 * (1.0 + f1[i].abs()) {
                    unbiased_ok = false;
                }
            } else {
                let z = mean.abs() / se;
                max_z = max_z.max(z);
                if z > 4.0 {
                    unbiased_ok = false;
                }
            }
        }
    }

    AssumptionAudit {
        max_contraction_ratio: max_ratio,
        contraction_ok,
        max_abs_z: max_z,
        unbiased_ok,
        max_noise_ratio: max_noise,
        noise_ok,
    }
}
