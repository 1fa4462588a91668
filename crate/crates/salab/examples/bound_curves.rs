//! Constant ledger and bound curves for multiplicative noise: the maximal
//! bound, its log-free variant, the fixed-time bound and the almost-sure
//! envelope, at h chosen automatically from the stepsize condition.
//!
//! cargo run --release --example bound_curves

use salab::bounds::{build_mult_ledger, BoundVariant, MultInputs};
use salab::core::NormSpec;
use salab::moreau::MoreauConfig;

fn main() -> anyhow::Result<()> {
    let moreau = MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0)?;
    let l = build_mult_ledger(&MultInputs {
        gamma_c: 0.5,
        sigma: 1.0,
        x0_err: 1.0,
        xstar_norm: 0.0,
        moreau,
        alpha: 4.0,
        h: None,
    })?;
    println!("regime {:?}, D = {}, m = {:?}, h = {}", l.regime, l.d, l.m, l.h());
    println!("D0..D4 = {:.4e} {:.4e} {:.4e} {:.4e} {:.4e}", l.d0, l.d1, l.d2, l.d3, l.d4);
    println!("conditions: {}", l.conditions.summary());

    let variants = [BoundVariant::MultDpos, BoundVariant::MultPrime, BoundVariant::FixedTimeMult, BoundVariant::WorstCase];
    print!("\n{:>9}", "k");
    for v in &variants {
        print!("{:>18}", v.as_str());
    }
    println!();
    for k in [0usize, 10, 100, 1_000, 10_000, 100_000, 1_000_000] {
        print!("{k:>9}");
        for &v in &variants {
            print!("{:>18.4e}", l.value(v, 0.05, 0, k)?);
        }
        println!();
    }
    println!("\nsamples for ‖x_k‖² <= 1e-3 w.p. 0.95: {:.3e}", l.sample_complexity(1e-3, 0.05)?);
    Ok(())
}
