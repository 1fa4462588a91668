//! Tabular MDPs and three RL algorithms cast as SA problems: n-step
//! off-policy TD, TD(0) with linear features, and Q-learning.

mod mdp;
mod offpolicy;
mod qlearning;
mod tdlfa;

pub use mdp::{chain_stationary, is_irreducible, stationary_distribution, MdpDocument, Policy, TabularMDP};
pub use offpolicy::{ISFactors, OffPolicyTD, L_O_INFLATION};
pub use qlearning::{maximal_value, QLearning, QLearningConstants};
pub use tdlfa::{tdlfa_build, TdLfa};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::core::{NormSpec, StreamRng};

/// Empirical lower estimate of a Lipschitz factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub gamma_hat: f64,
    /// The pair attaining `gamma_hat`.
    pub pair: (Vec<f64>, Vec<f64>),
}

/// `max ‖F̄(Q₁) − F̄(Q₂)‖ / ‖Q₁ − Q₂‖` over `n_pairs` pairs drawn uniformly
/// from `[−scale, scale]^dim`.
pub fn estimate_contraction_factor<F>(
    expected_op: F,
    norm: &NormSpec,
    dim: usize,
    n_pairs: usize,
    scale: f64,
    rng: &mut StreamRng,
) -> ContractionEstimate
where
    F: Fn(&[f64], &mut [f64]),
{
    let (mut f1, mut f2) = (vec![0.0; dim], vec![0.0; dim]);
    let mut best = ContractionEstimate { gamma_hat: 0.0, pair: (vec![0.0; dim], vec![0.0; dim]) };
    for _ in 0..n_pairs.max(1) {
        let q1: Vec<f64> = (0..dim).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let q2: Vec<f64> = (0..dim).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let den = norm.dist(&q1, &q2);
        if den == 0.0 {
            continue;
        }
        expected_op(&q1, &mut f1);
        expected_op(&q2, &mut f2);
        let r = norm.dist(&f1, &f2) / den;
        if r > best.gamma_hat {
            best = ContractionEstimate { gamma_hat: r, pair: (q1, q2) };
        }
    }
    best
}
