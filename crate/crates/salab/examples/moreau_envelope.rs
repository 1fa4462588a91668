//! The generalized Moreau envelope: closed form vs numeric minimiser, and the
//! ℓ_∞/ℓ_p configuration used for Q-learning with its sandwich constants.
//!
//! cargo run --release --example moreau_envelope

use salab::core::NormSpec;
use salab::moreau::{moreau_eval, moreau_eval_numeric, MoreauConfig};

fn main() -> anyhow::Result<()> {
    let e = MoreauConfig::new(NormSpec::euclidean(3), NormSpec::euclidean(3), 0.5)?;
    let x = [0.3, -1.2, 2.0];
    println!("l2/l2: closed form {:.12}, numeric {:.12}", moreau_eval(&e, &x)?, moreau_eval_numeric(&e, &x)?);

    let d = 16;
    let q = MoreauConfig::q_learning_recipe(d, 0.975)?;
    let k = q.constants(0.975);
    println!("\nmax-norm / l_p recipe, d = {d}: mu = {:.6}, L = {:.4}, l_cs = {:.4}, u_cs = {}", q.mu, q.l_smooth, q.l_cs, q.u_cs);
    println!("l_cM = {:.6}, u_cM = {:.6}, gamma_tilde = {:.6}", k.l_cm, k.u_cm, k.gamma_tilde);
    let x: Vec<f64> = (0..d).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();
    let m = moreau_eval(&q, &x)?;
    let n = NormSpec::max_norm(d).eval(&x);
    println!(
        "sandwich: {:.6} <= M(x) = {:.6} <= {:.6}",
        n * n / (2.0 * k.u_cm * k.u_cm),
        m,
        n * n / (2.0 * k.l_cm * k.l_cm)
    );
    Ok(())
}
