//! Drives a CLI recipe from code: parse a configuration, run it, and read the
//! curve table back.
//!
//! cargo run --release --example cli_config

use salab::cli::{parse_curve_table, run_experiment, ExperimentConfig, RunOptions};

fn main() -> anyhow::Result<()> {
    let cfg = ExperimentConfig::from_json_str(
        r#"{
            "experiment": "audit",
            "problem": {"kind": "affine", "gamma": 0.5, "x0": 1.0},
            "schedule": {"alpha": 4.4, "h": "auto"},
            "run": {"n": 500, "k_max": 1000, "delta": 0.05, "master_seed": 4}
        }"#,
    )?;
    let dir = std::env::temp_dir().join("salab-cli-example");
    let s = run_experiment(&cfg, &RunOptions { output_dir: Some(dir.clone()), ..Default::default() })?;
    println!("{}", s.headline);
    let rows = parse_curve_table(&std::fs::read_to_string(dir.join("envelope.csv"))?)?;
    let last = rows.last().unwrap();
    println!("k = {}: bound {:.4e}, median err^2 {:.4e}, max err^2 {:.4e}", last.k, last.bound.unwrap(), last.q[1].unwrap(), last.q[3].unwrap());
    Ok(())
}
