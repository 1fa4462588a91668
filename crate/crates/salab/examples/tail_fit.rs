//! Tail exponents of the rescaled error: Gaussian-like (β ≈ 2) under
//! additive noise, heavy (β < 1.5) for the multiplicative counterexample.
//!
//! cargo run --release --example tail_fit

use salab::core::StepSchedule;
use salab::engine::AffineProblem;
use salab::hard_example::{tail_exponent_empirical, tail_exponent_of, HardExampleSpec};
use salab::verify::TailFitOptions;

fn main() -> anyhow::Result<()> {
    let opts = TailFitOptions { n_boot: 50, ..TailFitOptions::default() };
    let k = 1000;

    // started at x* so the fluctuation, not the decaying bias, is measured
    let add = AffineProblem::scalar(0.5, 0.0, 1.0, 0.0)?;
    let s = StepSchedule::harmonic(4.4, 282.0)?;
    let f = tail_exponent_of(&add, &s, k, 100_000, 1, &opts)?;
    println!("additive Gaussian noise: beta = {:.3}, 95% CI [{:.3}, {:.3}]", f.beta_hat, f.ci.0, f.ci.1);

    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(4.0, 9.0)?)?;
    let f = tail_exponent_empirical(&hard, k, 100_000, 1, &opts)?;
    println!("hard example (alpha D = 2): beta = {:.3}, 95% CI [{:.3}, {:.3}]", f.beta_hat, f.ci.0, f.ci.1);
    Ok(())
}
