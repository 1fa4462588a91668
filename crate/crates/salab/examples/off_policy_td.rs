//! n-step off-policy TD with importance-sampling factors on a random MDP:
//! the biased limit, the contraction factor, and the multiplicative ledger.
//!
//! cargo run --release --example off_policy_td

use salab::bounds::{build_mult_ledger, MultInputs};
use salab::cli::default_moreau;
use salab::engine::SAProblem;
use salab::rl::{ISFactors, OffPolicyTD, Policy, TabularMDP};

fn main() -> anyhow::Result<()> {
    let mdp = TabularMDP::garnet(4, 2, 2, 0.8, 5)?;
    let pi_b = Policy::uniform(4, 2);
    let pi = Policy::new(vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5], vec![0.2, 0.8]])?;
    let factors = ISFactors::truncated(&pi, &pi_b, 1.0, 1.2, 2)?;
    let p = OffPolicyTD::new(mdp, pi_b, &pi, factors, vec![0.0; 8])?;
    println!("gamma_o = {:.6}, L_o = {:.4}", p.gamma_o(), p.l_o());
    println!("Q_(pi,rho) = {:?}", p.q_limit().iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());

    let norm = p.norm_c();
    let l = build_mult_ledger(&MultInputs {
        gamma_c: p.gamma_c(),
        sigma: p.l_o(),
        x0_err: norm.dist(p.x0(), p.x_star()),
        xstar_norm: norm.eval(p.x_star()),
        moreau: default_moreau(norm, p.gamma_c())?,
        alpha: 100.0,
        h: None,
    })?;
    println!("regime {:?}, D = {:.4}, auto h = {:.4e}", l.regime, l.d, l.h());
    println!("conditions: {}", l.conditions.summary());
    Ok(())
}
