use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{sample_categorical, stationary_distribution, Policy, TabularMDP};
use crate::core::{derive_stream, NormSpec, SeedSpec, StreamRng};
use crate::engine::{NoiseModel, SAProblem};
use crate::error::{Error, Result};

/// Inflation applied to the audited noise constant `L_o`.
pub const L_O_INFLATION: f64 = 1.05;

/// Generalised importance-sampling factors `c`, `ρ` over `(s,a)` and the
/// lookahead `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ISFactors {
    pub c: Vec<f64>,
    pub rho: Vec<f64>,
    pub n: usize,
}

impl ISFactors {
    pub fn new(c: Vec<f64>, rho: Vec<f64>, n: usize) -> Result<Self> {
        if c.len() != rho.len() {
            return Err(Error::DimensionMismatch { expected: c.len(), got: rho.len() });
        }
        if n == 0 {
            return Err(Error::InvalidParameter("lookahead n must be >= 1".into()));
        }
        if c.iter().chain(&rho).any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("IS factors must be finite and nonnegative".into()));
        }
        Ok(ISFactors { c, rho, n })
    }

    /// `c = ρ = π/π_b` (0 where `π_b` vanishes).
    pub fn ratio(pi: &Policy, pi_b: &Policy, n: usize) -> Result<Self> {
        Self::truncated(pi, pi_b, f64::INFINITY, f64::INFINITY, n)
    }

    /// `c = min(c̄, π/π_b)`, `ρ = min(ρ̄, π/π_b)`.
    pub fn truncated(pi: &Policy, pi_b: &Policy, c_bar: f64, rho_bar: f64, n: usize) -> Result<Self> {
        if pi.n_states() != pi_b.n_states() || pi.n_actions() != pi_b.n_actions() {
            return Err(Error::DimensionMismatch { expected: pi_b.n_states(), got: pi.n_states() });
        }
        let (ns, na) = (pi.n_states(), pi.n_actions());
        let ratio: Vec<f64> = (0..ns)
            .flat_map(|s| (0..na).map(move |a| (s, a)))
            .map(|(s, a)| if pi_b.prob(s, a) > 0.0 { pi.prob(s, a) / pi_b.prob(s, a) } else { 0.0 })
            .collect();
        Self::new(ratio.iter().map(|r| r.min(c_bar)).collect(), ratio.iter().map(|r| r.min(rho_bar)).collect(), n)
    }

    /// Checks `ρ ≥ c` and `max_s Σ_a π_b(a|s) ρ(s,a) ≤ 1/γ`.
    pub fn validate(&self, pi_b: &Policy, gamma: f64) -> Result<()> {
        let na = pi_b.n_actions();
        if self.c.len() != pi_b.n_states() * na {
            return Err(Error::DimensionMismatch { expected: pi_b.n_states() * na, got: self.c.len() });
        }
        if let Some(i) = (0..self.c.len()).find(|&i| self.rho[i] < self.c[i]) {
            return Err(Error::Assumption(format!("rho < c at pair {i}")));
        }
        for s in 0..pi_b.n_states() {
            let m: f64 = (0..na).map(|a| pi_b.prob(s, a) * self.rho[s * na + a]).sum();
            if m > 1.0 / gamma + 1e-12 {
                return Err(Error::Assumption(format!("Σ_a π_b(a|{s}) ρ({s},a) = {m} exceeds 1/γ")));
            }
        }
        Ok(())
    }
}

/// n-step off-policy TD with generalised importance sampling as a
/// multiplicative-noise SA problem in `‖·‖_∞`.
#[derive(Clone, Debug)]
pub struct OffPolicyTD {
    mdp: TabularMDP,
    pi_b: Policy,
    factors: ISFactors,
    kappa: Vec<f64>,
    /// `F̄(Q) = MQ + v`
    m: DMatrix<f64>,
    v: DVector<f64>,
    gamma_o: f64,
    l_o: f64,
    q_limit: Vec<f64>,
    norm: NormSpec,
    x0: Vec<f64>,
}

impl OffPolicyTD {
    pub fn new(mdp: TabularMDP, pi_b: Policy, pi: &Policy, factors: ISFactors, x0: Vec<f64>) -> Result<Self> {
        mdp.check_policy(&pi_b)?;
        mdp.check_policy(pi)?;
        let d = mdp.n_pairs();
        if x0.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x0.len() });
        }
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                if pi.prob(s, a) > 0.0 && pi_b.prob(s, a) == 0.0 {
                    return Err(Error::Assumption(format!("behaviour policy does not cover ({s},{a})")));
                }
            }
        }
        factors.validate(&pi_b, mdp.gamma())?;
        let kappa = stationary_distribution(&mdp, &pi_b)?;
        let mut op = OffPolicyTD {
            mdp,
            pi_b,
            factors,
            kappa,
            m: DMatrix::zeros(d, d),
            v: DVector::zeros(d),
            gamma_o: f64::NAN,
            l_o: f64::NAN,
            q_limit: vec![0.0; d],
            norm: NormSpec::max_norm(d),
            x0,
        };
        // F̄ is affine: recover it column by column
        let zero = vec![0.0; d];
        let mut out = vec![0.0; d];
        op.expected_op(&zero, &mut out);
        op.v = DVector::from_column_slice(&out);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            op.expected_op(&e, &mut out);
            for i in 0..d {
                op.m[(i, j)] = out[i] - op.v[i];
            }
            e[j] = 0.0;
        }
        // exact ∞-norm Lipschitz constant of an affine map
        op.gamma_o = op.m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        if !(op.gamma_o < 1.0) {
            return Err(Error::Assumption(format!("expected operator is not a sup-norm contraction (factor {})", op.gamma_o)));
        }
        let lhs = DMatrix::<f64>::identity(d, d) - &op.m;
        let q = lhs.lu().solve(&op.v).ok_or_else(|| Error::Degenerate("I − M singular".into()))?;
        op.q_limit = q.as_slice().to_vec();
        op.l_o = L_O_INFLATION * op.audit_noise(200, 200, 0x0ff_7d)?;
        Ok(op)
    }

    /// Largest `‖F(Q,Y) − F̄(Q)‖_∞ / (1 + ‖Q‖_∞)` over random probes.
    fn audit_noise(&self, probes: usize, draws: usize, seed: u64) -> Result<f64> {
        let d = self.dim();
        let scale = 2.0 / (1.0 - self.mdp.gamma());
        let mut rng = derive_stream(SeedSpec::new(seed, 0));
        let (mut fy, mut fb) = (vec![0.0; d], vec![0.0; d]);
        let mut worst: f64 = 0.0;
        for i in 0..probes {
            // include the origin and the limit point among the probes
            let q: Vec<f64> = match i {
                0 => vec![0.0; d],
                1 => self.q_limit.clone(),
                _ => (0..d).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect(),
            };
            self.expected_op(&q, &mut fb);
            let nq = self.norm.eval(&q);
            for _ in 0..draws {
                self.sample_op(&q, &mut rng, &mut fy);
                worst = worst.max(self.norm.dist(&fy, &fb) / (1.0 + nq));
            }
        }
        if worst.is_finite() {
            Ok(worst)
        } else {
            Err(Error::NonFinite { k: 0, what: "off-policy noise audit".into() })
        }
    }

    pub fn mdp(&self) -> &TabularMDP {
        &self.mdp
    }
    pub fn stationary(&self) -> &[f64] {
        &self.kappa
    }
    pub fn factors(&self) -> &ISFactors {
        &self.factors
    }
    /// Exact sup-norm contraction factor of `F̄`.
    pub fn gamma_o(&self) -> f64 {
        self.gamma_o
    }
    /// Audited noise constant, inflated by [`L_O_INFLATION`].
    pub fn l_o(&self) -> f64 {
        self.l_o
    }
    /// The limit `Q_{π,ρ}`.
    pub fn q_limit(&self) -> &[f64] {
        &self.q_limit
    }
    /// Affine form `(M, v)` of `F̄(Q) = MQ + v`.
    pub fn affine_form(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.m, &self.v)
    }
}

impl SAProblem for OffPolicyTD {
    fn dim(&self) -> usize {
        self.mdp.n_pairs()
    }

    fn sample_op(&self, q: &[f64], rng: &mut StreamRng, out: &mut [f64]) {
        let (mdp, f, g) = (&self.mdp, &self.factors, self.mdp.gamma());
        out.copy_from_slice(q);
        let s0 = sample_categorical(&self.kappa, rng);
        let a0 = sample_categorical(self.pi_b.row(s0), rng);
        let (mut s, mut a) = (s0, a0);
        let mut coef = 1.0;
        let mut corr = 0.0;
        for i in 0..f.n {
            let j = mdp.idx(s, a);
            if i > 0 {
                coef *= g * f.c[j];
            }
            let s1 = sample_categorical(mdp.row(s, a), rng);
            let a1 = sample_categorical(self.pi_b.row(s1), rng);
            let j1 = mdp.idx(s1, a1);
            corr += coef * (mdp.reward(s, a) + g * f.rho[j1] * q[j1] - q[j]);
            s = s1;
            a = a1;
        }
        out[mdp.idx(s0, a0)] += corr;
    }

    /// Exact expectation by backward recursion over the lookahead.
    fn expected_op(&self, q: &[f64], out: &mut [f64]) {
        let (mdp, f, g) = (&self.mdp, &self.factors, self.mdp.gamma());
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let pi_b = &self.pi_b;
        // u(s′) = Σ_a′ π_b ρ Q,  w(s′) = Σ_a′ π_b c G
        let u: Vec<f64> = (0..ns)
            .map(|t| (0..na).map(|b| pi_b.prob(t, b) * f.rho[mdp.idx(t, b)] * q[mdp.idx(t, b)]).sum())
            .collect();
        let mut gv = vec![0.0; mdp.n_pairs()];
        let mut next = vec![0.0; mdp.n_pairs()];
        for _ in 0..f.n {
            let w: Vec<f64> = (0..ns)
                .map(|t| (0..na).map(|b| pi_b.prob(t, b) * f.c[mdp.idx(t, b)] * gv[mdp.idx(t, b)]).sum())
                .collect();
            for s in 0..ns {
                for a in 0..na {
                    let row = mdp.row(s, a);
                    let (eu, ew) = row.iter().enumerate().fold((0.0, 0.0), |(x, y), (t, p)| (x + p * u[t], y + p * w[t]));
                    let j = mdp.idx(s, a);
                    next[j] = mdp.reward(s, a) + g * eu - q[j] + g * ew;
                }
            }
            std::mem::swap(&mut gv, &mut next);
        }
        for s in 0..ns {
            for a in 0..na {
                let j = mdp.idx(s, a);
                out[j] = q[j] + self.kappa[s] * pi_b.prob(s, a) * gv[j];
            }
        }
    }

    fn norm_c(&self) -> &NormSpec {
        &self.norm
    }
    fn gamma_c(&self) -> f64 {
        self.gamma_o
    }
    fn noise(&self) -> NoiseModel {
        NoiseModel::Multiplicative { sigma: self.l_o }
    }
    fn x_star(&self) -> &[f64] {
        &self.q_limit
    }
    fn x0(&self) -> &[f64] {
        &self.x0
    }
    fn name(&self) -> String {
        format!("offpolicy_td(|S|={}, |A|={}, n={})", self.mdp.n_states(), self.mdp.n_actions(), self.factors.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::estimate_contraction_factor;

    fn setup() -> (TabularMDP, Policy, Policy) {
        let mdp = TabularMDP::garnet(3, 2, 2, 0.8, 4).unwrap();
        let pi_b = Policy::new(vec![vec![0.5, 0.5], vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let pi = Policy::new(vec![vec![0.9, 0.1], vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        (mdp, pi_b, pi)
    }

    /// Expectation by enumerating every path `(s0,a0,…,sn,an)`.
    fn brute_force(op: &OffPolicyTD, pi_b: &Policy, q: &[f64]) -> Vec<f64> {
        let mdp = op.mdp();
        let mut out = q.to_vec();
        fn walk(
            op: &OffPolicyTD,
            pi_b: &Policy,
            q: &[f64],
            path: &mut Vec<(usize, usize)>,
            prob: f64,
            out: &mut [f64],
        ) {
            let mdp = op.mdp();
            let f = op.factors();
            if path.len() == f.n + 1 {
                let g = mdp.gamma();
                let mut sum = 0.0;
                for i in 0..f.n {
                    let mut coef = g.powi(i as i32);
                    for &(s, a) in &path[1..=i] {
                        coef *= f.c[mdp.idx(s, a)];
                    }
                    let (s, a) = path[i];
                    let (s1, a1) = path[i + 1];
                    sum += coef
                        * (mdp.reward(s, a) + g * f.rho[mdp.idx(s1, a1)] * q[mdp.idx(s1, a1)] - q[mdp.idx(s, a)]);
                }
                let (s0, a0) = path[0];
                out[mdp.idx(s0, a0)] += prob * sum;
                return;
            }
            let (s, a) = *path.last().unwrap();
            for t in 0..mdp.n_states() {
                for b in 0..mdp.n_actions() {
                    let p = mdp.row(s, a)[t] * pi_b.prob(t, b);
                    if p > 0.0 {
                        path.push((t, b));
                        walk(op, pi_b, q, path, prob * p, out);
                        path.pop();
                    }
                }
            }
        }
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let p = op.stationary()[s] * pi_b.prob(s, a);
                walk(op, pi_b, q, &mut vec![(s, a)], p, &mut out);
            }
        }
        out
    }

    #[test]
    fn dp_matches_path_enumeration() {
        let (mdp, pi_b, pi) = setup();
        for n in [1, 2, 3] {
            let f = ISFactors::truncated(&pi, &pi_b, 1.0, 1.2, n).unwrap();
            let op = OffPolicyTD::new(mdp.clone(), pi_b.clone(), &pi, f, vec![0.0; 6]).unwrap();
            let q: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
            let mut dp = vec![0.0; 6];
            op.expected_op(&q, &mut dp);
            let bf = brute_force(&op, &pi_b, &q);
            for (x, y) in dp.iter().zip(&bf) {
                assert!((x - y).abs() <= 1e-12, "n={n}: {dp:?} vs {bf:?}");
            }
        }
    }

    #[test]
    fn on_policy_reduction() {
        let (mdp, pi_b, _) = setup();
        let f = ISFactors::ratio(&pi_b, &pi_b, 1).unwrap();
        let op = OffPolicyTD::new(mdp.clone(), pi_b.clone(), &pi_b, f, vec![0.0; 6]).unwrap();
        let qpi = mdp.policy_q_value(&pi_b).unwrap();
        for (x, y) in op.q_limit().iter().zip(&qpi) {
            assert!((x - y).abs() <= 1e-10);
        }
        let mut out = vec![0.0; 6];
        op.expected_op(op.q_limit(), &mut out);
        for (x, y) in out.iter().zip(op.q_limit()) {
            assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn contraction_and_validation() {
        let (mdp, pi_b, pi) = setup();
        let f = ISFactors::truncated(&pi, &pi_b, 1.0, 1.0, 2).unwrap();
        let op = OffPolicyTD::new(mdp.clone(), pi_b.clone(), &pi, f, vec![0.0; 6]).unwrap();
        assert!(op.gamma_o() < 1.0);
        let mut rng = derive_stream(SeedSpec::new(2, 0));
        let est = estimate_contraction_factor(|x, o| op.expected_op(x, o), op.norm_c(), 6, 2000, 5.0, &mut rng);
        assert!(est.gamma_hat <= op.gamma_o() + 1e-12 && est.gamma_hat > 0.0);
        // ρ < c is rejected
        let bad = ISFactors::new(vec![1.0; 6], vec![0.5; 6], 1).unwrap();
        assert!(OffPolicyTD::new(mdp.clone(), pi_b.clone(), &pi, bad, vec![0.0; 6]).is_err());
        // Σ π_b ρ > 1/γ is rejected
        let bad = ISFactors::new(vec![1.0; 6], vec![1.3; 6], 1).unwrap();
        assert!(OffPolicyTD::new(mdp, pi_b, &pi, bad, vec![0.0; 6]).is_err());
    }

    #[test]
    fn sample_mean_matches_expectation() {
        let (mdp, pi_b, pi) = setup();
        let f = ISFactors::truncated(&pi, &pi_b, 1.0, 1.0, 2).unwrap();
        let op = OffPolicyTD::new(mdp, pi_b, &pi, f, vec![0.0; 6]).unwrap();
        let q = vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let mut rng = derive_stream(SeedSpec::new(3, 0));
        let n = 100_000;
        let (mut s1, mut s2, mut buf) = (vec![0.0; 6], vec![0.0; 6], vec![0.0; 6]);
        for _ in 0..n {
            op.sample_op(&q, &mut rng, &mut buf);
            for i in 0..6 {
                s1[i] += buf[i];
                s2[i] += buf[i] * buf[i];
            }
        }
        let mut fb = vec![0.0; 6];
        op.expected_op(&q, &mut fb);
        for i in 0..6 {
            let mean = s1[i] / n as f64;
            let se = ((s2[i] / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
            assert!((mean - fb[i]).abs() <= 4.0 * se + 1e-12, "coordinate {i}");
        }
    }
}
