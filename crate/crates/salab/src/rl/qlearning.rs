use serde::{Deserialize, Serialize};

use super::mdp::{sample_categorical, stationary_distribution, Policy, TabularMDP};
use crate::bounds::{BoundCurve, BoundVariant, WorstCase};
use crate::core::{NormSpec, StreamRng};
use crate::engine::{NoiseModel, SAProblem};
use crate::error::{Error, Result};

/// Tabular Q-learning with i.i.d. `(S, A, S′)`, `S ~ κ_b`, `A ~ π_b(·|S)`.
#[derive(Clone, Debug)]
pub struct QLearning {
    mdp: TabularMDP,
    pi_b: Policy,
    kappa: Vec<f64>,
    /// Diagonal of `D_b`: `κ_b(s) π_b(a|s)`.
    d_b: Vec<f64>,
    q_star: Vec<f64>,
    norm: NormSpec,
    x0: Vec<f64>,
}

/// Constants attached to a Q-learning instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QLearningConstants {
    pub gamma: f64,
    pub d_b_min: f64,
    pub d_b_max: f64,
    /// `1 − D_{b,min}(1 − γ)`
    pub gamma_hat: f64,
    /// `4/(1 − γ)`
    pub sigma_bar: f64,
    pub c_d: f64,
    /// `log(|S||A|) / (D_{b,min}³ (1 − γ)⁵)`
    pub c_q: f64,
    /// Almost-sure multiplicative noise level `(1 + D_{b,max}) max(R_max, 1 + γ)`.
    pub sigma_worst_case: f64,
    /// `1/(1 − γ)`
    pub iterate_bound: f64,
}

impl QLearning {
    pub fn new(mdp: TabularMDP, pi_b: Policy, x0: Vec<f64>) -> Result<Self> {
        mdp.check_policy(&pi_b)?;
        let d = mdp.n_pairs();
        if x0.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
        }
        let bound = 1.0 / (1.0 - mdp.gamma());
        let norm = NormSpec::max_norm(d);
        if norm.eval(&x0) > bound {
            return Err(Error::Assumption(format!("‖Q₀‖_∞ = {} exceeds 1/(1−γ) = {bound}", norm.eval(&x0))));
        }
        let kappa = stationary_distribution(&mdp, &pi_b)?;
        let d_b: Vec<f64> = (0..mdp.n_states())
            .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
            .map(|(s, a)| kappa[s] * pi_b.prob(s, a))
            .collect();
        if d_b.iter().any(|&v| v <= 0.0) {
            return Err(Error::Assumption("behaviour policy leaves a state-action pair unvisited".into()));
        }
        let mut q = QLearning { mdp, pi_b, kappa, d_b, q_star: vec![0.0; d], norm, x0 };
        q.q_star = q.value_iteration(1e-13)?;
        Ok(q)
    }

    /// `H(Q)(s,a) = R(s,a) + γ Σ_{s′} P_a(s,s′) max_{a′} Q(s′,a′)`.
    pub fn bellman(&self, q: &[f64], out: &mut [f64]) {
        let m = &self.mdp;
        let vmax: Vec<f64> = (0..m.n_states())
            .map(|t| (0..m.n_actions()).map(|b| q[m.idx(t, b)]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        for s in 0..m.n_states() {
            for a in 0..m.n_actions() {
                let ev: f64 = m.row(s, a).iter().zip(&vmax).map(|(p, v)| p * v).sum();
                out[m.idx(s, a)] = m.reward(s, a) + m.gamma() * ev;
            }
        }
    }

    fn value_iteration(&self, tol: f64) -> Result<Vec<f64>> {
        let d = self.dim();
        let (mut q, mut next) = (vec![0.0; d], vec![0.0; d]);
        let g = self.mdp.gamma();
        for _ in 0..1_000_000 {
            self.bellman(&q, &mut next);
            let r = self.norm.dist(&q, &next);
            std::mem::swap(&mut q, &mut next);
            if r * g / (1.0 - g) <= tol {
                return Ok(q);
            }
        }
        Err(Error::NoConvergence { what: "value iteration".into(), iterations: 1_000_000 })
    }

    pub fn mdp(&self) -> &TabularMDP {
        &self.mdp
    }
    pub fn stationary(&self) -> &[f64] {
        &self.kappa
    }
    pub fn d_b(&self) -> &[f64] {
        &self.d_b
    }
    pub fn q_star(&self) -> &[f64] {
        &self.q_star
    }

    pub fn constants(&self) -> QLearningConstants {
        let g = self.mdp.gamma();
        let d_b_min = self.d_b.iter().copied().fold(f64::INFINITY, f64::min);
        let d_b_max = self.d_b.iter().copied().fold(0.0, f64::max);
        let r_max = self.mdp.rewards().iter().copied().fold(0.0, f64::max);
        QLearningConstants {
            gamma: g,
            d_b_min,
            d_b_max,
            gamma_hat: 1.0 - d_b_min * (1.0 - g),
            sigma_bar: 4.0 / (1.0 - g),
            c_d: 1.0,
            c_q: (self.dim() as f64).ln() / (d_b_min.powi(3) * (1.0 - g).powi(5)),
            sigma_worst_case: (1.0 + d_b_max) * r_max.max(1.0 + g),
            iterate_bound: 1.0 / (1.0 - g),
        }
    }

    /// Almost-sure envelope `B_k(D)` with the multiplicative constant
    /// [`QLearningConstants::sigma_worst_case`].
    pub fn worst_case(&self, alpha: f64, h: f64) -> Result<WorstCase> {
        let c = self.constants();
        WorstCase::new(
            c.gamma_hat,
            c.sigma_worst_case,
            self.norm.dist(&self.x0, &self.q_star),
            self.norm.eval(&self.q_star),
            alpha,
            h,
        )
    }

    /// Maximal bound on `‖Q_k − Q*‖²_∞`; needs `α > 2/(1 − γ̂)`.
    pub fn maximal_curve(&self, alpha: f64, h: f64, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve> {
        let c = self.constants();
        let threshold = 2.0 / (1.0 - c.gamma_hat);
        if !(alpha > threshold) {
            return Err(Error::ConditionViolated(format!("alpha = {alpha} must exceed 2/(1 − gamma_hat) = {threshold}")));
        }
        if !(delta > 0.0 && delta < 1.0) || !(h >= 1.0) {
            return Err(Error::InvalidParameter(format!("need delta in (0,1) and h >= 1, got {delta}, {h}")));
        }
        Ok(BoundCurve::from_fn(ks.iter().copied(), delta, k_anchor, BoundVariant::QLearning, |k| {
            maximal_value(c.c_q, c.gamma_hat, alpha, h, delta, k_anchor, k)
        }))
    }
}

/// `c_q [log(1/δ)/(k+h) + (h/(k+h))^{(1−γ̂)α/2} + (1 + log((k+1)/K^{1/2}))/(k+h)]`,
/// with `K` read as `max(K, 1)`.
pub fn maximal_value(c_q: f64, gamma_hat: f64, alpha: f64, h: f64, delta: f64, k_anchor: usize, k: usize) -> f64 {
    let kh = k as f64 + h;
    let ke = k_anchor.max(1) as f64;
    c_q * ((1.0 / delta).ln() / kh
        + (h / kh).powf((1.0 - gamma_hat) * alpha / 2.0)
        + (1.0 + ((k as f64 + 1.0) / ke.sqrt()).ln()) / kh)
}

impl SAProblem for QLearning {
    fn dim(&self) -> usize {
        self.mdp.n_pairs()
    }

    fn sample_op(&self, q: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let m = &self.mdp;
        out.copy_from_slice(q);
        let s = sample_categorical(&self.kappa, rng);
        let a = sample_categorical(self.pi_b.row(s), rng);
        let t = sample_categorical(m.row(s, a), rng);
        let vmax = (0..m.n_actions()).map(|b| q[m.idx(t, b)]).fold(f64::NEG_INFINITY, f64::max);
        let j = m.idx(s, a);
        out[j] += m.reward(s, a) + m.gamma() * vmax - q[j];
    }

    /// `D_b H(Q) + (I − D_b) Q`.
    fn expected_op(&self, q: &[f64], out: &mut [f64]) {
        self.bellman(q, out);
        for ((o, qi), w) in out.iter_mut().zip(q).zip(&self.d_b) {
            *o = w * *o + (1.0 - w) * qi;
        }
    }

    fn norm_c(&self) -> &NormSpec {
        &self.norm
    }
    fn gamma_c(&self) -> f64 {
        self.constants().gamma_hat
    }
    fn noise(&self) -> NoiseModel {
        let c = self.constants();
        NoiseModel::AdditiveSubgaussian { sigma_bar: c.sigma_bar, c_d: c.c_d }
    }
    fn x_star(&self) -> &[f64] {
        &self.q_star
    }
    fn x0(&self) -> &[f64] {
        &self.x0
    }
    fn name(&self) -> String {
        format!("q_learning(|S|={}, |A|={}, gamma={})", self.mdp.n_states(), self.mdp.n_actions(), self.mdp.gamma())
    }
}
