//! The ten acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the verdicts are always printed.
//! Criteria listed in `KNOWN_RED` are reported as FAIL; for those the run
//! only checks that the failing part is exactly the documented one.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use salab::bounds::{build_add_ledger, build_mult_ledger, AddInputs, AddLedger, BoundVariant, MultInputs, MultLedger};
use salab::cli::{run_experiment, Experiment, ExperimentConfig, HSpec, RunOptions};
use salab::core::{derive_stream, NormSpec, SeedSpec, StepSchedule};
use salab::engine::{AffineProblem, SAProblem};
use salab::hard_example::{errors_at_step, ks_distance_discrete, tail_exponent_empirical, tail_exponent_of, HardExampleSpec};
use salab::linear_sa::{remodel, FiniteLinearLaw, LinearSASpec};
use salab::moreau::{moreau_eval, moreau_eval_numeric, MoreauConfig};
use salab::rl::{tdlfa_build, ISFactors, OffPolicyTD, Policy, QLearning, TabularMDP};
use salab::verify::{
    audit_ensemble, check_mgf_recursion, check_supermartingale, Corruption, Machinery, MachineryOptions,
    MachineryReport, TailFitOptions,
};

/// Relative tolerance of the almost-sure check (inside the audit).
const AS_TOL: f64 = salab::verify::AUDIT_REL_TOL;
const DELTA: f64 = 0.05;
const ADD_TAIL_CI: (f64, f64) = (1.6, 2.4);
const HEAVY_TAIL_CI_MAX: f64 = 1.5;
const MOREAU_CLOSED_FORM_TOL: f64 = 1e-8;
const LYAPUNOV_TOL_PER_DIM: f64 = 1e-10;
const GAMMA_SQ_SLACK: f64 = 1e-12;
const TD_VALUE_TOL: f64 = 1e-8;
const MC_SE_GATE: f64 = 4.0;
const KS_MAX: f64 = 0.01;

/// Criterion 8's multiplicative negative controls cannot fail on any
/// instance meeting the stepsize condition (analysis in the notes).
const KNOWN_RED: &[u32] = &[8];

struct Verdict {
    pass: bool,
    detail: String,
}

fn v(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn euclid1() -> MoreauConfig {
    MoreauConfig::new(NormSpec::euclidean(1), NormSpec::euclidean(1), 1.0).unwrap()
}

fn hard_ledger(alpha: f64) -> MultLedger {
    build_mult_ledger(&MultInputs {
        gamma_c: 0.5,
        sigma: 1.0,
        x0_err: 1.0,
        xstar_norm: 0.0,
        moreau: euclid1(),
        alpha,
        h: None,
    })
    .unwrap()
}

fn affine_ledger(x0: f64, alpha: f64, h: Option<f64>, z: f64) -> AddLedger {
    build_add_ledger(&AddInputs {
        gamma_c: 0.5,
        sigma_bar: 1.0,
        c_d: 1.0,
        x0_err: x0,
        moreau: euclid1(),
        alpha,
        h,
        z,
    })
    .unwrap()
}

fn q_instance() -> QLearning {
    let mdp = TabularMDP::constant_reward(2, 2, 0.9).unwrap();
    QLearning::new(mdp, Policy::uniform(2, 2), vec![0.0; 4]).unwrap()
}

fn c1_almost_sure() -> Res<Verdict> {
    let (n, k_max) = (10_000, 1_000);
    let ks: Vec<usize> = (0..=k_max).collect();
    let l = hard_ledger(4.0);
    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, l.schedule)?;
    let wc = l.bound_curve_unchecked(BoundVariant::WorstCase, DELTA, 0, &ks)?;
    let a = audit_ensemble(&hard, &l.schedule, k_max, n, 11, None, &wc)?;

    let q = q_instance();
    let (alpha, h) = (1.0, 2.0);
    let qwc = q.worst_case(alpha, h)?;
    let qcurve = salab::bounds::BoundCurve::from_fn(ks.iter().copied(), DELTA, 0, BoundVariant::WorstCase, |k| {
        qwc.at(k).powi(2)
    });
    let b = audit_ensemble(&q, &StepSchedule::harmonic(alpha, h)?, k_max, n, 12, None, &qcurve)?;
    Ok(v(
        a.violations == 0 && b.violations == 0,
        format!(
            "hard example (h = {:.1}): {} violations; Q-learning: {} violations (rel tol {AS_TOL:e})",
            l.h(),
            a.violations,
            b.violations
        ),
    ))
}

fn c2_multiplicative() -> Res<Verdict> {
    let (n, k_max) = (2_000, 10_000);
    let l = hard_ledger(4.0);
    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, l.schedule)?;
    let ks: Vec<usize> = (0..=k_max).collect();
    let curve = l.bound_curve(BoundVariant::MultDpos, DELTA, 0, &ks)?;
    let a = audit_ensemble(&hard, &l.schedule, k_max, n, 21, None, &curve)?;
    Ok(v(a.passes(DELTA), format!("{} / {} violations, cp_upper = {:.4}", a.violations, n, a.cp_upper)))
}

fn c3_additive() -> Res<Verdict> {
    let (n, k_max) = (2_000, 10_000);
    let ks: Vec<usize> = (0..=k_max).collect();
    let p = AffineProblem::scalar(0.5, 0.0, 1.0, 1.0)?;
    let mut parts = Vec::new();
    let mut pass = true;
    for (z, alpha, seed) in [(1.0, 4.4, 31), (0.6, 1.0, 32)] {
        let l = affine_ledger(1.0, alpha, None, z);
        let curve = l.bound_curve(l.primary_variant(), DELTA, 0, &ks)?;
        let a = audit_ensemble(&p, &l.schedule, k_max, n, seed, None, &curve)?;
        pass &= a.passes(DELTA);
        parts.push(format!("z = {z} (h = {:.1}): {} violations, cp_upper = {:.4}", l.h(), a.violations, a.cp_upper));
    }
    Ok(v(pass, parts.join("; ")))
}

fn c4_q_learning(scratch: &Path) -> Res<Verdict> {
    let mut cfg = ExperimentConfig::default_for(Experiment::RlDemo);
    cfg.run.n = 2_000;
    cfg.run.k_max = 10_000;
    cfg.run.master_seed = 41;
    run_experiment(&cfg, &RunOptions { output_dir: Some(scratch.join("c4")), ..Default::default() })?;
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scratch.join("c4/audit.json"))?)?;
    let a = &r["audits"][0];
    let it = &r["iterate_check"];
    let pass = a["variant"] == "q_learning" && a["audit"]["cp_upper"].as_f64().unwrap() <= DELTA && it["holds"] == true;
    Ok(v(
        pass,
        format!(
            "alpha = 84, h = 336: {} / 2000 violations, cp_upper = {:.4}; max |Q_k| = {:.6} <= {}",
            a["audit"]["violations"],
            a["audit"]["cp_upper"].as_f64().unwrap(),
            it["max_iterate_norm"].as_f64().unwrap(),
            it["iterate_bound"].as_f64().unwrap()
        ),
    ))
}

fn c5_tail_dichotomy() -> Res<Verdict> {
    let (k, n) = (1_000, 100_000);
    let opts = TailFitOptions::default();
    let l = affine_ledger(0.0, 4.4, None, 1.0);
    let add = AffineProblem::scalar(0.5, 0.0, 1.0, 0.0)?;
    let fa = tail_exponent_of(&add, &l.schedule, k, n, 51, &opts)?;
    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(4.0, 9.0)?)?;
    let fh = tail_exponent_empirical(&hard, k, n, 52, &opts)?;

    let growing = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(4.4, 9.0)?)?;
    let logs = (10..=20).map(|k| growing.exact_rescaled_mgf(k, 1.0, 2.0).map(|m| m.log_value)).collect::<Result<Vec<_>, _>>()?;
    let increasing = logs.windows(2).all(|w| w[1] > w[0]);
    let w = hard.find_epsilon_witness(0.5, 30, 1_000_000);
    let crossing = w.as_ref().and_then(|w| {
        hard.mgf_lower_bound_path(1_000_000, 1.0, 0.5, w.k_eps).into_iter().find(|(_, l)| *l > 100.0).map(|(k, _)| k)
    });
    let pass = fa.ci.0 >= ADD_TAIL_CI.0
        && fa.ci.1 <= ADD_TAIL_CI.1
        && fh.ci.1 < HEAVY_TAIL_CI_MAX
        && increasing
        && crossing.is_some();
    Ok(v(
        pass,
        format!(
            "additive beta CI [{:.3}, {:.3}]; hard example beta CI [{:.3}, {:.3}]; MGF increasing on [10,20]: {increasing}; lower bound > 100 at k = {:?}",
            fa.ci.0, fa.ci.1, fh.ci.0, fh.ci.1, crossing
        ),
    ))
}

fn c6_moreau() -> Res<Verdict> {
    let mut rng = derive_stream(SeedSpec::new(61, 0));
    let d = 5;
    let e = MoreauConfig::new(NormSpec::euclidean(d), NormSpec::euclidean(d), 0.7)?;
    let mut worst_cf = 0f64;
    for _ in 0..1_000 {
        let x: Vec<f64> = (0..d).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let (a, b) = (moreau_eval(&e, &x)?, moreau_eval_numeric(&e, &x)?);
        worst_cf = worst_cf.max((a - b).abs());
    }

    let mut sandwich_ok = true;
    let mut recipe_ok = true;
    for d in [4usize, 16] {
        let gamma_hat = 0.975;
        let q = MoreauConfig::q_learning_recipe(d, gamma_hat)?;
        let p = 2.0 * (d as f64).ln();
        recipe_ok &= (q.l_cs - (-0.5f64).exp()).abs() < 1e-12 && q.u_cs == 1.0 && (q.l_smooth - (p - 1.0)).abs() < 1e-12;
        let k = q.constants(gamma_hat);
        let max = NormSpec::max_norm(d);
        for _ in 0..10_000 {
            let x: Vec<f64> = (0..d).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
            let m = moreau_eval(&q, &x)?;
            let n2 = max.eval(&x).powi(2);
            let (lo, hi) = (n2 / (2.0 * k.u_cm * k.u_cm), n2 / (2.0 * k.l_cm * k.l_cm));
            sandwich_ok &= m >= lo * (1.0 - 1e-10) && m <= hi * (1.0 + 1e-10);
        }
    }
    Ok(v(
        worst_cf <= MOREAU_CLOSED_FORM_TOL && sandwich_ok && recipe_ok,
        format!("closed form vs numeric max gap {worst_cf:.2e}; max/l_p sandwich on 2x10^4 points: {sandwich_ok}; recipe constants: {recipe_ok}"),
    ))
}

fn linear_ok(s: &LinearSASpec) -> bool {
    s.lyapunov_residual <= LYAPUNOV_TOL_PER_DIM * s.dim as f64
        && s.gamma_bar_exact < 1.0
        && s.gamma_bar_exact.powi(2) <= s.gamma_bar_sq_bound + GAMMA_SQ_SLACK
}

fn c7_linear_sa() -> Res<Verdict> {
    let m = |r: usize, v: &[f64]| DMatrix::from_row_slice(r, r, v);
    let scalar = remodel(
        FiniteLinearLaw::new(vec![
            (0.5, m(1, &[-0.5]), DVector::from_vec(vec![1.0])),
            (0.5, m(1, &[-1.5]), DVector::from_vec(vec![-0.5])),
        ])?,
        vec![0.0],
    )?;
    let diag = remodel(
        FiniteLinearLaw::new(vec![
            (0.3, DMatrix::from_diagonal(&DVector::from_vec(vec![-0.2, -1.0, -3.0])), DVector::from_vec(vec![1.0, 0.0, 0.5])),
            (0.7, DMatrix::from_diagonal(&DVector::from_vec(vec![-0.6, -0.4, -1.0])), DVector::from_vec(vec![0.0, 1.0, -0.5])),
        ])?,
        vec![0.0; 3],
    )?;
    let mdp = TabularMDP::garnet(6, 2, 3, 0.9, 71)?;
    let pi = Policy::uniform(6, 2);
    let td = tdlfa_build(&mdp, &pi, &DMatrix::identity(6, 6))?.into_problem(vec![0.0; 6])?;
    let v_pi = mdp.policy_value(&pi)?;
    let td_err = td.x_star().iter().zip(v_pi.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let parts = [("scalar", &scalar.spec), ("diagonal", &diag.spec), ("td_lfa", &td.spec)];
    let pass = parts.iter().all(|(_, s)| linear_ok(s)) && td_err <= TD_VALUE_TOL;
    let detail = parts
        .iter()
        .map(|(n, s)| format!("{n}: residual {:.1e}, gamma_bar {:.4}", s.lyapunov_residual, s.gamma_bar_exact))
        .chain(std::iter::once(format!("|theta* - V^pi| = {td_err:.1e}")))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(v(pass, detail))
}

fn mopts(corruption: Corruption, seed: u64) -> MachineryOptions {
    MachineryOptions { k_range: 0..=50, n: 100_000, master_seed: seed, workers: None, corruption }
}

fn c8_machinery() -> Res<(Verdict, bool)> {
    let lam = Corruption::LambdaScale(10.0);
    let drift = Corruption::DriftScale(0.01);
    let show = |r: &MachineryReport| r.passed;

    // additive: λ×10 bites away from x*, drift/100 at x*
    let (p1, l1) = (AffineProblem::scalar(0.5, 0.0, 1.0, 1.0)?, affine_ledger(1.0, 4.4, None, 1.0));
    let (p0, l0) = (AffineProblem::scalar(0.5, 0.0, 1.0, 0.0)?, affine_ledger(0.0, 4.4, None, 1.0));
    let (m1, m0) = (Machinery::Add(&l1), Machinery::Add(&l0));
    let add_nominal = show(&check_mgf_recursion(&p1, m1, &mopts(Corruption::None, 81))?)
        && show(&check_supermartingale(&p1, m1, &mopts(Corruption::None, 81))?)
        && show(&check_mgf_recursion(&p0, m0, &mopts(Corruption::None, 82))?)
        && show(&check_supermartingale(&p0, m0, &mopts(Corruption::None, 82))?);
    let add_controls = !show(&check_mgf_recursion(&p1, m1, &mopts(lam, 83))?)
        && !show(&check_supermartingale(&p0, m0, &mopts(drift, 84))?);

    let l = hard_ledger(4.0);
    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, l.schedule)?;
    let m = Machinery::Mult(&l);
    let mult_nominal = show(&check_mgf_recursion(&hard, m, &mopts(Corruption::None, 85))?)
        && show(&check_supermartingale(&hard, m, &mopts(Corruption::None, 85))?);
    let r_lam = check_mgf_recursion(&hard, m, &mopts(lam, 86))?;
    let r_drift = check_supermartingale(&hard, m, &mopts(drift, 87))?;
    let worst_z = |r: &MachineryReport| r.rows.iter().map(|x| x.z).fold(f64::NEG_INFINITY, f64::max);
    let mult_controls = !r_lam.passed && !r_drift.passed;

    let pass = add_nominal && add_controls && mult_nominal && mult_controls;
    // the documented red part: everything holds except the multiplicative controls
    let as_documented = add_nominal && add_controls && mult_nominal && !mult_controls;
    Ok((
        v(
            pass,
            format!(
                "additive nominal pass: {add_nominal}, controls rejected: {add_controls}; multiplicative nominal pass: {mult_nominal}, controls rejected: {mult_controls} (worst z: lambda x10 {:.1}, drift/100 {:.1})",
                worst_z(&r_lam),
                worst_z(&r_drift)
            ),
        ),
        as_documented,
    ))
}

/// Componentwise `|mean − F̄| ≤ 4 SE` (exact equality where the draws are
/// constant).
fn operator_matches(p: &dyn SAProblem, x: &[f64], draws: usize, seed: u64) -> (bool, f64) {
    let d = p.dim();
    let mut rng = derive_stream(SeedSpec::new(seed, 0));
    let (mut sum, mut sq, mut out) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut mean_op = vec![0.0; d];
    p.expected_op(x, &mut mean_op);
    for _ in 0..draws {
        p.sample_op(x, &mut rng, &mut out);
        for i in 0..d {
            // centred at the exact mean for a stable variance
            let c = out[i] - mean_op[i];
            sum[i] += c;
            sq[i] += c * c;
        }
    }
    let nf = draws as f64;
    let mut worst = 0f64;
    let mut ok = true;
    for i in 0..d {
        let m = sum[i] / nf;
        let var = (sq[i] / nf - m * m).max(0.0) * nf / (nf - 1.0);
        let se = (var / nf).sqrt();
        if se == 0.0 {
            ok &= m.abs() <= 1e-12 * mean_op[i].abs().max(1.0);
        } else {
            worst = worst.max(m.abs() / se);
            ok &= m.abs() <= MC_SE_GATE * se;
        }
    }
    (ok, worst)
}

fn c9_oracles() -> Res<Verdict> {
    let draws = 1_000_000;
    let mdp = TabularMDP::garnet(4, 2, 2, 0.8, 91)?;
    let pi_b = Policy::uniform(4, 2);
    let pi = Policy::new(vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.5, 0.5], vec![0.2, 0.8]])?;
    let q = QLearning::new(mdp.clone(), pi_b.clone(), vec![0.0; 8])?;
    let off = OffPolicyTD::new(mdp.clone(), pi_b.clone(), &pi, ISFactors::truncated(&pi, &pi_b, 1.0, 1.2, 2)?, vec![0.0; 8])?;
    let td = tdlfa_build(&mdp, &pi, &DMatrix::identity(4, 4))?.into_problem(vec![0.0; 4])?;
    let mut rng = derive_stream(SeedSpec::new(92, 0));
    let mut pt = |d: usize| (0..d).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect::<Vec<f64>>();
    let (xq, xo, xt) = (pt(8), pt(8), pt(4));
    let rq = operator_matches(&q, &xq, draws, 93);
    let ro = operator_matches(&off, &xo, draws, 94);
    let rt = operator_matches(&td, &xt, draws, 95);

    let hard = HardExampleSpec::new(0.5, 1.0, 1.0, StepSchedule::harmonic(1.0, 3.0)?)?;
    let k = 15;
    let samples = errors_at_step(&hard, &hard.schedule, k, 100_000, 96, None)?;
    let ks = ks_distance_discrete(&samples, &hard.exact_distribution(k)?);
    Ok(v(
        rq.0 && ro.0 && rt.0 && ks <= KS_MAX,
        format!(
            "max |z|: q_learning {:.2}, off_policy {:.2}, td_lfa {:.2} (gate {MC_SE_GATE}); KS at k = {k}: {ks:.4}",
            rq.1, ro.1, rt.1
        ),
    ))
}

fn c10_determinism(scratch: &Path) -> Res<Verdict> {
    let mut same = true;
    let mut checked = 0;
    for e in salab::cli::Experiment::ALL {
        let mut cfg = ExperimentConfig::default_for(e);
        cfg.run.n = if e == Experiment::Tailfit { 10_000 } else { 300 };
        cfg.run.k_max = cfg.run.k_max.min(if e == Experiment::VerifyMachinery { 10 } else { 150 });
        cfg.run.n_boot = 8;
        if e == Experiment::HardExample {
            cfg.schedule.h = HSpec::Value(9.0);
        }
        let mut outputs = Vec::new();
        for (i, workers) in [Some(1), Some(4), None].into_iter().enumerate() {
            let dir = scratch.join(format!("c10/{}/{i}", e.as_str()));
            let s = run_experiment(&cfg, &RunOptions { workers, output_dir: Some(dir.clone()), ..Default::default() })?;
            let files: Vec<(String, Vec<u8>)> =
                s.files.iter().map(|f| (f.clone(), std::fs::read(dir.join(f)).unwrap())).collect();
            outputs.push(files);
        }
        same &= outputs.windows(2).all(|w| w[0] == w[1]);
        checked += outputs[0].len();
    }
    Ok(v(same, format!("{checked} files from all 7 recipes byte-identical under --workers 1, 4 and default")))
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let crit: Vec<(u32, &str, Box<dyn Fn() -> Res<(Verdict, bool)>>)> = vec![
        (1, "almost-sure bound", Box::new(|| c1_almost_sure().map(|v| (v, false)))),
        (2, "multiplicative maximal bound", Box::new(|| c2_multiplicative().map(|v| (v, false)))),
        (3, "additive maximal bound", Box::new(|| c3_additive().map(|v| (v, false)))),
        (4, "Q-learning bound", Box::new(|| c4_q_learning(scratch.path()).map(|v| (v, false)))),
        (5, "tail dichotomy", Box::new(|| c5_tail_dichotomy().map(|v| (v, false)))),
        (6, "Moreau suite", Box::new(|| c6_moreau().map(|v| (v, false)))),
        (7, "linear SA", Box::new(|| c7_linear_sa().map(|v| (v, false)))),
        (8, "proof machinery", Box::new(c8_machinery)),
        (9, "oracle equivalence", Box::new(|| c9_oracles().map(|v| (v, false)))),
        (10, "determinism", Box::new(|| c10_determinism(scratch.path()).map(|v| (v, false)))),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, f) in &crit {
        if only.is_some_and(|o| o != *id) {
            continue;
        }
        let t = Instant::now();
        let (verdict, as_documented) = match f() {
            Ok(r) => r,
            Err(e) => (v(false, format!("error: {e}")), false),
        };
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {id:>2} [{}] {name} ({secs:.1}s): {}",
            if verdict.pass { "PASS" } else { "FAIL" },
            verdict.detail
        );
        let known_red = KNOWN_RED.contains(id);
        if verdict.pass == known_red || (known_red && !as_documented) {
            unexpected.push(*id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
