use nalgebra::{DMatrix, DVector};

use super::mdp::{stationary_distribution, Policy, TabularMDP};
use crate::error::{Error, Result};
use crate::linear_sa::{remodel_with, Expectations, FiniteLinearLaw, LinearSAProblem};

/// On-policy TD(0) with linear features as a linear SA.
#[derive(Clone, Debug)]
pub struct TdLfa {
    pub a_bar: DMatrix<f64>,
    pub b_bar: DVector<f64>,
    /// Law of `(A_o(Y), b_o(Y))` with `Y = (S, A, S′)`.
    pub law: FiniteLinearLaw,
    pub kappa: Vec<f64>,
    /// Features actually used (after rescaling).
    pub phi: DMatrix<f64>,
    /// Factor the supplied features were divided by (1 when none needed).
    pub rescaled_by: f64,
}

/// Builds `A_o(s,a,s′) = φ(s)(γφ(s′) − φ(s))ᵀ`, `b_o = −φ(s)R(s,a)` and their
/// exact means under `κ(s)π(a|s)P_a(s,s′)`. Rows of `phi` are `φ(s)ᵀ`;
/// features are rescaled so that `max_s ‖φ(s)‖₂ ≤ 1`.
pub fn tdlfa_build(mdp: &TabularMDP, pi: &Policy, phi: &DMatrix<f64>) -> Result<TdLfa> {
    mdp.check_policy(pi)?;
    let (ns, d) = (mdp.n_states(), phi.ncols());
    if phi.nrows() != ns {
        return Err(Error::DimensionMismatch { expected: ns, got: phi.nrows() });
    }
    let sv = phi.clone().svd(false, false).singular_values;
    if d > ns || sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Degenerate("feature columns are linearly dependent".into()));
    }
    let max_row = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let rescaled_by = max_row.max(1.0);
    let phi = phi / rescaled_by;
    let kappa = stationary_distribution(mdp, pi)?;
    let g = mdp.gamma();
    let mut atoms = Vec::new();
    for s in 0..ns {
        let fs = phi.row(s).transpose();
        for a in 0..mdp.n_actions() {
            let w = kappa[s] * pi.prob(s, a);
            if w == 0.0 {
                continue;
            }
            for (t, &p) in mdp.row(s, a).iter().enumerate() {
                if p > 0.0 {
                    let diff = phi.row(t).transpose() * g - &fs;
                    atoms.push((w * p, &fs * diff.transpose(), -&fs * mdp.reward(s, a)));
                }
            }
        }
    }
    // renormalise the rounding of κ·π·P
    let total: f64 = atoms.iter().map(|t| t.0).sum();
    for t in atoms.iter_mut() {
        t.0 /= total;
    }
    let law = FiniteLinearLaw::new(atoms)?;
    // closed forms ΦᵀK(γP_π − I)Φ and −ΦᵀK r_π
    let k = DMatrix::from_diagonal(&DVector::from_column_slice(&kappa));
    let p_pi = mdp.induced_chain(pi);
    let a_bar = phi.transpose() * &k * (p_pi * g - DMatrix::<f64>::identity(ns, ns)) * &phi;
    let b_bar = -(phi.transpose() * &k * mdp.induced_reward(pi));
    Ok(TdLfa { a_bar, b_bar, law, kappa, phi, rescaled_by })
}

impl TdLfa {
    /// The remodelled SA problem in the Lyapunov geometry of `Ā_o`.
    pub fn into_problem(self, x0: Vec<f64>) -> Result<LinearSAProblem<FiniteLinearLaw>> {
        let exp = Expectations::exact(self.a_bar, self.b_bar);
        let (a_max, b_max) = (self.law.a_max(), self.law.b_max());
        remodel_with(self.law, &exp, a_max, b_max, x0)
    }
}
