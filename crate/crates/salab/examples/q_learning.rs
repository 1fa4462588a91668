//! Tabular Q-learning: the constants of its concentration bound, the
//! almost-sure envelope, and an ensemble audit with the iterate bound.
//!
//! cargo run --release --example q_learning

use salab::engine::{run_ensemble, EnsembleOptions};
use salab::rl::{Policy, QLearning, TabularMDP};
use salab::core::StepSchedule;
use salab::verify::audit_violations;

fn main() -> anyhow::Result<()> {
    let mdp = TabularMDP::constant_reward(2, 2, 0.9)?;
    let q = QLearning::new(mdp, Policy::uniform(2, 2), vec![0.0; 4])?;
    let c = q.constants();
    println!("Q* = {:?}", q.q_star());
    println!("gamma_hat = {}, c_q = {:.4e}, sigma_bar = {}", c.gamma_hat, c.c_q, c.sigma_bar);

    let (alpha, h, k_max) = (84.0, 336.0, 5_000);
    let ks: Vec<usize> = (0..=k_max).collect();
    let curve = q.maximal_curve(alpha, h, 0.05, 0, &ks)?;
    let s = StepSchedule::harmonic(alpha, h)?;
    let ens = run_ensemble(&q, &s, k_max, 500, 3, EnsembleOptions::default())?;
    let a = audit_violations(&ens, &curve)?;
    println!("tabular bound: {} / {} violations, cp_upper = {:.4}", a.violations, a.n, a.cp_upper);
    let wc = q.worst_case(alpha, h)?;
    let worst = ens.errors.iter().flat_map(|e| e.iter().enumerate()).all(|(k, &x)| x <= wc.at(k) + 1e-9);
    println!("almost-sure envelope holds on every step: {worst}");
    Ok(())
}
