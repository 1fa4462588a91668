//! Monte Carlo audit of a maximal bound: run an ensemble, count trajectories
//! that ever cross the curve, and bound the violation probability.
//!
//! cargo run --release --example audit

use salab::bounds::{build_add_ledger, AddInputs};
use salab::core::NormSpec;
use salab::engine::AffineProblem;
use salab::moreau::MoreauConfig;
use salab::verify::audit_ensemble;

fn main() -> anyhow::Result<()> {
    // x ↦ x/2 with standard Gaussian additive noise
    let p = AffineProblem::scalar(0.5, 0.0, 1.0, 1.0)?;
    let l = build_add_ledger(&AddInputs {
        gamma_c: 0.5,
        sigma_bar: 1.0,
        c_d: 1.0,
        x0_err: 1.0,
        moreau: MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0)?,
        alpha: 4.4,
        h: None,
        z: 1.0,
    })?;
    let (k_max, n, delta) = (2_000, 1_000, 0.05);
    let ks: Vec<usize> = (0..=k_max).collect();
    let curve = l.bound_curve(l.primary_variant(), delta, 0, &ks)?;
    let a = audit_ensemble(&p, &l.schedule, k_max, n, 1, None, &curve)?;
    println!("h = {:.2}, bound at k = {k_max}: {:.4e}", l.h(), curve.values[k_max]);
    println!(
        "{} / {} trajectories violate; Clopper-Pearson upper {:.4} (delta = {delta}) -> {}",
        a.violations,
        a.n,
        a.cp_upper,
        if a.passes(delta) { "PASS" } else { "FAIL" }
    );
    println!("smallest slack bound - err^2 over the grid: {:.4e}", a.min_slack);
    Ok(())
}
