use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{derive_stream, SeedSpec, StreamRng};
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Finite discounted MDP. State-action pairs are indexed `s * n_actions + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMDP {
    n_states: usize,
    n_actions: usize,
    /// `p[(s * n_actions + a) * n_states + s']`
    p: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
}

impl TabularMDP {
    /// `transitions[s][a][s']`, `rewards[s][a]`.
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        let n_states = transitions.len();
        if n_states == 0 {
            return Err(Error::InvalidParameter("MDP needs at least one state".into()));
        }
        let n_actions = transitions[0].len();
        if n_actions == 0 {
            return Err(Error::InvalidParameter("MDP needs at least one action".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0,1), got {gamma}")));
        }
        if rewards.len() != n_states {
            return Err(Error::DimensionMismatch { expected: n_states, got: rewards.len() });
        }
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        let mut r = Vec::with_capacity(n_states * n_actions);
        for (s, (rows, rew)) in transitions.iter().zip(&rewards).enumerate() {
            if rows.len() != n_actions || rew.len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, got: rows.len().min(rew.len()) });
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(Error::DimensionMismatch { expected: n_states, got: row.len() });
                }
                check_simplex(row).map_err(|e| Error::InvalidParameter(format!("P(·|{s},{a}): {e}")))?;
                p.extend_from_slice(row);
                let ra = rew[a];
                if !(0.0..=1.0).contains(&ra) {
                    return Err(Error::InvalidParameter(format!("reward R({s},{a}) = {ra} outside [0,1]")));
                }
                r.push(ra);
            }
        }
        Ok(TabularMDP { n_states, n_actions, p, r, gamma })
    }

    /// Reward 1 everywhere and uniform transitions, so `Q* ≡ 1/(1−γ)`.
    pub fn constant_reward(n_states: usize, n_actions: usize, gamma: f64) -> Result<Self> {
        let row = vec![1.0 / n_states as f64; n_states];
        Self::new(vec![vec![row; n_actions]; n_states], vec![vec![1.0; n_actions]; n_states], gamma)
    }

    /// Garnet-style random MDP: each `(s,a)` moves to `branching` distinct
    /// states with random-partition probabilities; rewards uniform on `[0,1]`.
    /// Draws are repeated (deterministically) until the uniform policy
    /// induces an irreducible chain.
    pub fn garnet(n_states: usize, n_actions: usize, branching: usize, gamma: f64, seed: u64) -> Result<Self> {
        if branching == 0 || branching > n_states {
            return Err(Error::InvalidParameter(format!("branching must lie in 1..={n_states}")));
        }
        let uniform = Policy::uniform(n_states, n_actions);
        for attempt in 0..1000u64 {
            let mut rng = derive_stream(SeedSpec::new(seed, attempt));
            let mut trans = Vec::with_capacity(n_states);
            let mut rew = Vec::with_capacity(n_states);
            for _ in 0..n_states {
                let mut rows = Vec::with_capacity(n_actions);
                let mut rs = Vec::with_capacity(n_actions);
                for _ in 0..n_actions {
                    let targets = rand::seq::index::sample(&mut rng, n_states, branching);
                    let mut cuts: Vec<f64> = (0..branching - 1).map(|_| rng.random::<f64>()).collect();
                    cuts.push(0.0);
                    cuts.push(1.0);
                    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let mut row = vec![0.0; n_states];
                    for (i, t) in targets.iter().enumerate() {
                        row[t] = cuts[i + 1] - cuts[i];
                    }
                    // fold rounding into the largest entry
                    let excess: f64 = row.iter().sum::<f64>() - 1.0;
                    let imax = (0..n_states).max_by(|&i, &j| row[i].partial_cmp(&row[j]).unwrap()).unwrap();
                    row[imax] -= excess;
                    rows.push(row);
                    rs.push(rng.random::<f64>());
                }
                trans.push(rows);
                rew.push(rs);
            }
            let mdp = Self::new(trans, rew, gamma)?;
            if is_irreducible(&mdp.induced_chain(&uniform)) {
                return Ok(mdp);
            }
        }
        Err(Error::Degenerate("no irreducible Garnet instance found in 1000 draws".into()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(s).map_err(|e| Error::InvalidParameter(format!("MDP document: {e}")))?;
        doc.into_mdp()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::InvalidParameter(format!("reading {}: {e}", path.as_ref().display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_document(&self) -> MdpDocument {
        MdpDocument {
            gamma: self.gamma,
            transitions: (0..self.n_states)
                .map(|s| (0..self.n_actions).map(|a| self.row(s, a).to_vec()).collect())
                .collect(),
            rewards: (0..self.n_states).map(|s| (0..self.n_actions).map(|a| self.reward(s, a)).collect()).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    #[inline]
    pub fn idx(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }
    /// `P_a(s, ·)`
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.idx(s, a) * self.n_states;
        &self.p[i..i + self.n_states]
    }
    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[self.idx(s, a)]
    }
    pub fn rewards(&self) -> &[f64] {
        &self.r
    }

    /// `P_π(s, s′) = Σ_a π(a|s) P_a(s, s′)`.
    pub fn induced_chain(&self, pi: &Policy) -> DMatrix<f64> {
        let n = self.n_states;
        DMatrix::from_fn(n, n, |s, t| (0..self.n_actions).map(|a| pi.prob(s, a) * self.row(s, a)[t]).sum())
    }

    /// `r_π(s) = Σ_a π(a|s) R(s,a)`.
    pub fn induced_reward(&self, pi: &Policy) -> DVector<f64> {
        DVector::from_fn(self.n_states, |s, _| (0..self.n_actions).map(|a| pi.prob(s, a) * self.reward(s, a)).sum())
    }

    /// `V^π = (I − γP_π)^{-1} r_π`.
    pub fn policy_value(&self, pi: &Policy) -> Result<DVector<f64>> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let m = DMatrix::<f64>::identity(n, n) - self.induced_chain(pi) * self.gamma;
        m.lu().solve(&self.induced_reward(pi)).ok_or_else(|| Error::Degenerate("I − γP_π singular".into()))
    }

    /// `Q^π(s,a) = R(s,a) + γ Σ_{s′} P_a(s,s′) V^π(s′)`.
    pub fn policy_q_value(&self, pi: &Policy) -> Result<Vec<f64>> {
        let v = self.policy_value(pi)?;
        let mut q = vec![0.0; self.n_pairs()];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let ev: f64 = self.row(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum();
                q[self.idx(s, a)] = self.reward(s, a) + self.gamma * ev;
            }
        }
        Ok(q)
    }

    pub(crate) fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(Error::DimensionMismatch { expected: self.n_pairs(), got: pi.n_states * pi.n_actions });
        }
        Ok(())
    }
}

/// On-disk MDP description: `transitions[s][a][s']`, `rewards[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub gamma: f64,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
}

impl MdpDocument {
    pub fn into_mdp(self) -> Result<TabularMDP> {
        TabularMDP::new(self.transitions, self.rewards, self.gamma)
    }
}

/// Stationary policy `π(a|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    table: Vec<f64>,
}

impl Policy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, |r| r.len());
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidParameter("empty policy table".into()));
        }
        let mut table = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::DimensionMismatch { expected: n_actions, got: row.len() });
            }
            check_simplex(row).map_err(|e| Error::InvalidParameter(format!("π(·|{s}): {e}")))?;
            table.extend_from_slice(row);
        }
        Ok(Policy { n_states, n_actions, table })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy { n_states, n_actions, table: vec![1.0 / n_actions as f64; n_states * n_actions] }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.table[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.table[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

fn check_simplex(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|&p| !(p >= 0.0)) {
        return Err("negative or NaN entry".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_TOL {
        return Err(format!("entries sum to {sum}"));
    }
    Ok(())
}

/// Index drawn from a probability vector by inversion of one uniform.
#[inline]
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Whether every state reaches every other through positive entries.
pub fn is_irreducible(chain: &DMatrix<f64>) -> bool {
    let n = chain.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for t in 0..n {
                let w = if forward { chain[(s, t)] } else { chain[(t, s)] };
                if w > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        seen.into_iter().all(|b| b)
    };
    reach(true) && reach(false)
}

/// Stationary distribution of the chain induced by `pi`.
pub fn stationary_distribution(mdp: &TabularMDP, pi: &Policy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    chain_stationary(&mdp.induced_chain(pi))
}

/// Solves `κᵀP = κᵀ`, `Σκ = 1` for an irreducible stochastic matrix.
pub fn chain_stationary(chain: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = chain.nrows();
    if !is_irreducible(chain) {
        return Err(Error::Assumption("induced chain is reducible; no unique positive stationary distribution".into()));
    }
    // (Pᵀ − I)κ = 0 with the last equation replaced by Σκ = 1
    let mut m = chain.transpose() - DMatrix::<f64>::identity(n, n);
    m.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let k = m.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("singular stationary system".into()))?;
    if k.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate(format!("stationary solve produced a nonpositive entry: {k:?}")));
    }
    let total = k.sum();
    Ok(k.iter().map(|v| v / total).collect())
}
