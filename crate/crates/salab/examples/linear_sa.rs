//! Linear SA remodelled as a contraction: Lyapunov solve, the geometry `P̄`,
//! the contraction factor and the noise level, and TD with linear features.
//!
//! cargo run --release --example linear_sa

use nalgebra::{DMatrix, DVector};
use salab::engine::SAProblem;
use salab::linear_sa::{remodel, FiniteLinearLaw};
use salab::rl::{tdlfa_build, Policy, TabularMDP};

fn main() -> anyhow::Result<()> {
    let law = FiniteLinearLaw::new(vec![
        (0.5, DMatrix::from_row_slice(2, 2, &[-1.5, 1.0, 0.0, -0.5]), DVector::from_vec(vec![1.0, 0.0])),
        (0.5, DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.2, -0.5]), DVector::from_vec(vec![0.0, 1.0])),
    ])?;
    let p = remodel(law, vec![0.0, 0.0])?;
    let s = &p.spec;
    println!("A_bar = {}", s.a_bar);
    println!("Lyapunov residual {:.2e}, beta = {:.4}", s.lyapunov_residual, s.beta);
    println!(
        "gamma_bar = {:.6} (gamma_bar^2 = {:.6} <= {:.6}), sigma_hat = {:.4}",
        s.gamma_bar_exact,
        s.gamma_bar_exact.powi(2),
        s.gamma_bar_sq_bound,
        s.sigma_hat
    );
    println!("x* = {:?}", p.x_star());

    let mdp = TabularMDP::garnet(5, 2, 3, 0.9, 1)?;
    let pi = Policy::uniform(5, 2);
    let td = tdlfa_build(&mdp, &pi, &DMatrix::identity(5, 5))?;
    let q = td.into_problem(vec![0.0; 5])?;
    let v = mdp.policy_value(&pi)?;
    let err = q.x_star().iter().zip(v.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("\nTD-LFA (identity features): max |theta* - V^pi| = {err:.2e}, gamma_bar = {:.6}", q.spec.gamma_bar_exact);
    Ok(())
}
