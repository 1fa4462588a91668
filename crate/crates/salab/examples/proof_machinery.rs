//! Monte Carlo checks of the two proof devices behind the additive bound:
//! the one-step MGF recursion and the supermartingale, with the negative
//! controls that must make them fail.
//!
//! cargo run --release --example proof_machinery

use salab::bounds::{build_add_ledger, AddInputs};
use salab::core::NormSpec;
use salab::engine::AffineProblem;
use salab::moreau::MoreauConfig;
use salab::verify::{check_mgf_recursion, check_supermartingale, Corruption, Machinery, MachineryOptions};

fn main() -> anyhow::Result<()> {
    for (x0, control) in [(1.0, Corruption::LambdaScale(10.0)), (0.0, Corruption::DriftScale(0.01))] {
        let p = AffineProblem::scalar(0.5, 0.0, 1.0, x0)?;
        let l = build_add_ledger(&AddInputs {
            gamma_c: 0.5,
            sigma_bar: 1.0,
            c_d: 1.0,
            x0_err: x0,
            moreau: MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0)?,
            alpha: 4.4,
            h: None,
            z: 1.0,
        })?;
        let m = Machinery::Add(&l);
        let o = |corruption| MachineryOptions { n: 20_000, master_seed: 2, corruption, ..Default::default() };
        println!("x0 = {x0}");
        for r in [
            check_mgf_recursion(&p, m, &o(Corruption::None))?,
            check_supermartingale(&p, m, &o(Corruption::None))?,
            check_mgf_recursion(&p, m, &o(control))?,
            check_supermartingale(&p, m, &o(control))?,
        ] {
            let worst = r.rows.iter().map(|x| x.z).fold(f64::NEG_INFINITY, f64::max);
            println!("  {:<16} {:<28} worst z = {:>9.2}  {}", r.check, format!("{:?}", r.corruption), worst, if r.passed { "pass" } else { "FAIL" });
        }
    }
    Ok(())
}
