//! Experiment driver behind the `salab` binary: a JSON configuration names a
//! recipe, a problem and a schedule; [`run_experiment`] resolves the constant
//! ledger, gates on the stepsize conditions, runs the recipe and writes a
//! manifest plus CSV tables and JSON reports.
//!
//! Every artefact is a pure function of the configuration: no timestamps,
//! no worker counts, no output paths end up in the files.

mod config;
mod instance;
mod table;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub use config::{
    Experiment, ExperimentConfig, Format, HSpec, LinearAtom, MdpSource, OutputBlock, ProblemBlock, RlAlgorithm,
    RunBlock, ScheduleBlock,
};
pub use instance::{default_moreau, Instance, Ledger, Problem};
pub use table::{format_value, parse_curve_table, TableRow, CURVE_HEADER};

use crate::bounds::{BoundCurve, BoundVariant, ConditionReport};
use crate::core::StepSchedule;
use crate::engine::{quantile_sorted, run_ensemble_visit, EnsembleResult, FaultRecord, TrajectoryVisitor};
use crate::hard_example::{errors_at_step, EpsilonWitness, ENUMERATION_CAP};
use crate::rl::QLearningConstants;
use crate::verify::{
    audit_violations, check_mgf_recursion, check_supermartingale, empirical_ccdf, fit_tail_exponent, Corruption,
    Machinery, MachineryOptions, MachineryReport, TailFit, TailFitOptions, ViolationAudit,
};

/// `λ` and `β̃` of the exact rescaled MGF sequence in the hard-example recipe.
pub const MGF_LAMBDA: f64 = 1.0;
pub const MGF_BETA: f64 = 2.0;
/// `β̃` and horizon of the divergence certificate in the hard-example recipe.
pub const CERT_BETA: f64 = 0.5;
pub const CERT_HORIZON: usize = 1_000_000;
/// Level the certified log-MGF lower bound has to cross.
pub const CERT_LOG_LEVEL: f64 = 100.0;
const CERT_MAX_J: u32 = 30;

/// Negative controls always run by `verify_machinery`.
pub const CONTROL_LAMBDA: Corruption = Corruption::LambdaScale(10.0);
pub const CONTROL_DRIFT: Corruption = Corruption::DriftScale(0.01);

#[derive(Debug, Error)]
pub enum CliError {
    #[error("stepsize conditions fail (use --force to run anyway): {0}")]
    Condition(String),
    #[error("invalid configuration: {0}")]
    Schema(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Compute(#[from] crate::error::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Compute(_) => 1,
            CliError::Condition(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Command-line overrides of a configuration.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub force: bool,
    /// Thread count; never changes any output.
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub experiment: Experiment,
    pub directory: PathBuf,
    /// File names written, relative to `directory`.
    pub files: Vec<String>,
    /// Conditions failed and `--force` was used.
    pub forced: bool,
    /// One-line human-readable result.
    pub headline: String,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    ExperimentConfig::from_json_str(&text)
}

/// Runs one experiment and writes its artefacts.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mut cfg = config.clone();
    if let Some(s) = opts.seed {
        cfg.run.master_seed = s;
    }
    if let Some(d) = &opts.output_dir {
        cfg.output.directory = d.clone();
    }
    cfg.validate()?;

    let inst = Instance::build(&cfg)?;
    let conditions_passed = inst.conditions.passed();
    if cfg.experiment.gated() && !conditions_passed && !opts.force {
        return Err(CliError::Condition(inst.conditions.summary()));
    }
    let forced = cfg.experiment.gated() && !conditions_passed;

    let mut out = Artifacts::new(&cfg.output.formats);
    let headline = match cfg.experiment {
        Experiment::Simulate => simulate(&cfg, &inst, opts, &mut out)?,
        Experiment::Bounds => bounds(&cfg, &inst, &mut out)?,
        Experiment::Audit | Experiment::RlDemo => audit(&cfg, &inst, opts, &mut out)?,
        Experiment::Tailfit => tailfit(&cfg, &inst, opts, &mut out)?,
        Experiment::HardExample => hard_example(&cfg, &inst, opts, &mut out)?,
        Experiment::VerifyMachinery => machinery(&cfg, &inst, opts, &mut out)?,
    };

    let manifest = Manifest {
        tool: "salab",
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment,
        problem: &cfg.problem,
        schedule: &cfg.schedule,
        run: &cfg.run,
        instance: inst.summary(),
        resolved_schedule: inst.schedule,
        ledger: inst.ledger.as_ref(),
        q_learning: inst.q_constants(),
        conditions: &inst.conditions,
        conditions_passed,
        forced,
        seeds: Seeds {
            master_seed: cfg.run.master_seed,
            streams: "trajectory i uses ChaCha8 stream i of master_seed",
        },
        files: out.files.keys().cloned().collect(),
    };
    out.files.insert("manifest.json".into(), to_json(&manifest)?);

    let dir = &cfg.output.directory;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, text) in &out.files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(RunSummary {
        experiment: cfg.experiment,
        directory: dir.clone(),
        files: out.files.keys().cloned().collect(),
        forced,
        headline,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    experiment: Experiment,
    problem: &'a ProblemBlock,
    schedule: &'a ScheduleBlock,
    run: &'a RunBlock,
    instance: instance::InstanceSummary,
    resolved_schedule: StepSchedule,
    ledger: Option<&'a Ledger>,
    q_learning: Option<QLearningConstants>,
    conditions: &'a ConditionReport,
    conditions_passed: bool,
    forced: bool,
    seeds: Seeds,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Seeds {
    master_seed: u64,
    streams: &'static str,
}

/// Files held in memory until the run succeeds, then written by one writer.
struct Artifacts {
    csv: bool,
    json: bool,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    fn new(formats: &[Format]) -> Self {
        Artifacts { csv: formats.contains(&Format::Csv), json: formats.contains(&Format::Json), files: BTreeMap::new() }
    }

    fn table(&mut self, name: &str, text: String) {
        if self.csv {
            self.files.insert(name.into(), text);
        }
    }

    fn report<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if self.json {
            self.files.insert(name.into(), to_json(value)?);
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Schema(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Stores every error path and the largest `‖x_k‖_∞` seen.
struct Recorder {
    errors: Vec<f64>,
    max_abs: f64,
}

impl TrajectoryVisitor for Recorder {
    type Output = (Vec<f64>, f64, Option<usize>);
    fn visit(&mut self, _k: usize, x: &[f64], err: f64) {
        self.errors.push(err);
        self.max_abs = x.iter().fold(self.max_abs, |m, v| m.max(v.abs()));
    }
    fn finish(self, fault: Option<usize>) -> Self::Output {
        (self.errors, self.max_abs, fault)
    }
}

struct Simulation {
    ens: EnsembleResult,
    max_abs_iterate: f64,
}

fn simulate_ensemble(cfg: &ExperimentConfig, inst: &Instance, opts: &RunOptions) -> Result<Simulation, CliError> {
    let (k_max, n, seed) = (cfg.run.k_max, cfg.run.n, cfg.run.master_seed);
    let p = inst.problem.sa();
    let out = run_ensemble_visit(p, &inst.schedule, k_max, n, seed, opts.workers, |_| Recorder {
        errors: Vec::with_capacity(k_max + 1),
        max_abs: 0.0,
    })?;
    let mut errors = Vec::with_capacity(n);
    let mut faults = Vec::new();
    let mut max_abs_iterate = 0f64;
    for (i, (e, m, fault)) in out.into_iter().enumerate() {
        if let Some(step) = fault {
            faults.push(FaultRecord { stream: i as u64, step });
        }
        errors.push(e);
        max_abs_iterate = max_abs_iterate.max(m);
    }
    let ens = EnsembleResult {
        k_max,
        master_seed: seed,
        schedule: inst.schedule,
        problem: p.name(),
        errors,
        iterates: None,
        faults,
    };
    ens.ensure_no_faults()?;
    Ok(Simulation { ens, max_abs_iterate })
}

/// Per-step `(q05, q50, q95, max)` of the squared error.
fn squared_envelope(ens: &EnsembleResult) -> Vec<[f64; 4]> {
    (0..=ens.k_max)
        .map(|k| {
            let mut v: Vec<f64> = ens.errors_at(k).into_iter().map(|e| e * e).collect();
            v.sort_by(f64::total_cmp);
            [quantile_sorted(&v, 0.05), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.95), v[v.len() - 1]]
        })
        .collect()
}

fn envelope_table(ens: &EnsembleResult, curve: Option<&BoundCurve>) -> String {
    let env = squared_envelope(ens);
    let rows = env.iter().enumerate().map(|(k, q)| TableRow {
        k,
        bound: curve.and_then(|c| c.value_at(k)),
        q: q.map(Some),
    });
    table::write_curve_table(rows)
}

fn curve_table(curve: &BoundCurve) -> String {
    table::write_curve_table(
        curve.ks.iter().zip(&curve.values).map(|(&k, &v)| TableRow { k, bound: Some(v), q: [None; 4] }),
    )
}

fn grid(cfg: &ExperimentConfig) -> Vec<usize> {
    (cfg.run.k_anchor..=cfg.run.k_max).collect()
}

fn simulate(cfg: &ExperimentConfig, inst: &Instance, opts: &RunOptions, out: &mut Artifacts) -> Result<String, CliError> {
    let sim = simulate_ensemble(cfg, inst, opts)?;
    let curve = match inst.primary() {
        Some(v) => Some(inst.curve(v, cfg.run.delta, cfg.run.k_anchor, &grid(cfg))?),
        None => None,
    };
    out.table("envelope.csv", envelope_table(&sim.ens, curve.as_ref()));
    Ok(format!(
        "simulated {} trajectories x {} steps of {}",
        cfg.run.n,
        cfg.run.k_max,
        inst.problem.sa().name()
    ))
}

fn bounds(cfg: &ExperimentConfig, inst: &Instance, out: &mut Artifacts) -> Result<String, CliError> {
    let ks = grid(cfg);
    let variants = inst.bound_variants();
    for &v in &variants {
        let c = inst.curve(v, cfg.run.delta, cfg.run.k_anchor, &ks)?;
        out.table(&format!("bound_{}.csv", v.as_str()), curve_table(&c));
    }
    let names: Vec<&str> = variants.iter().map(|v| v.as_str()).collect();
    Ok(format!("wrote {} bound curves ({})", names.len(), names.join(", ")))
}

#[derive(Clone, Debug, Serialize)]
pub struct CurveAudit {
    pub variant: BoundVariant,
    pub delta: f64,
    pub audit: ViolationAudit,
    /// `cp_upper ≤ δ` (`zero violations` for the almost-sure bound).
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct IterateCheck {
    /// `1/(1−γ)`
    pub iterate_bound: f64,
    /// Largest `‖Q_k‖_∞` over every trajectory and step.
    pub max_iterate_norm: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub problem: String,
    pub audits: Vec<CurveAudit>,
    pub iterate_check: Option<IterateCheck>,
    pub passed: bool,
}

fn audit(cfg: &ExperimentConfig, inst: &Instance, opts: &RunOptions, out: &mut Artifacts) -> Result<String, CliError> {
    let sim = simulate_ensemble(cfg, inst, opts)?;
    let ks = grid(cfg);
    let mut audits = Vec::new();
    let primary = inst.primary();
    let mut variants: Vec<BoundVariant> = primary.into_iter().collect();
    if inst.has_worst_case() && primary != Some(BoundVariant::WorstCase) {
        variants.push(BoundVariant::WorstCase);
    }
    let mut envelope_curve = None;
    for v in variants {
        let curve = inst.curve(v, cfg.run.delta, cfg.run.k_anchor, &ks)?;
        let a = audit_violations(&sim.ens, &curve)?;
        let passed = if v == BoundVariant::WorstCase { a.violations == 0 } else { a.passes(cfg.run.delta) };
        audits.push(CurveAudit { variant: v, delta: cfg.run.delta, audit: a, passed });
        if envelope_curve.is_none() {
            envelope_curve = Some(curve);
        }
    }
    out.table("envelope.csv", envelope_table(&sim.ens, envelope_curve.as_ref()));
    let iterate_check = inst.q_constants().map(|c| IterateCheck {
        iterate_bound: c.iterate_bound,
        max_iterate_norm: sim.max_abs_iterate,
        holds: sim.max_abs_iterate <= c.iterate_bound,
    });
    let passed = audits.iter().all(|a| a.passed) && iterate_check.as_ref().is_none_or(|c| c.holds);
    let headline = audits
        .iter()
        .map(|a| {
            format!(
                "{}: {} / {} violations, cp_upper = {:.4} [{}]",
                a.variant.as_str(),
                a.audit.violations,
                a.audit.n,
                a.audit.cp_upper,
                if a.passed { "PASS" } else { "FAIL" }
            )
        })
        .chain(iterate_check.iter().map(|c| {
            format!(
                "max |Q_k| = {:.6} <= {:.6} [{}]",
                c.max_iterate_norm,
                c.iterate_bound,
                if c.holds { "PASS" } else { "FAIL" }
            )
        }))
        .collect::<Vec<_>>()
        .join("; ");
    out.report("audit.json", &AuditReport { problem: sim.ens.problem.clone(), audits, iterate_check, passed })?;
    Ok(headline)
}

#[derive(Clone, Debug, Serialize)]
pub struct TailfitReport {
    pub problem: String,
    pub k: usize,
    pub n: usize,
    /// Samples are `(k+h)^{z/2} ‖x_k − x*‖_c`.
    pub rescale: f64,
    pub fit: TailFit,
}

fn tailfit(cfg: &ExperimentConfig, inst: &Instance, opts: &RunOptions, out: &mut Artifacts) -> Result<String, CliError> {
    let (k, n, s) = (cfg.run.k_max, cfg.run.n, &inst.schedule);
    let p = inst.problem.sa();
    let rescale = (k as f64 + s.h).powf(s.z / 2.0);
    let samples: Vec<f64> =
        errors_at_step(p, s, k, n, cfg.run.master_seed, opts.workers)?.into_iter().map(|e| e * rescale).collect();
    let ccdf = empirical_ccdf(&samples)?;
    let fit_opts = TailFitOptions { n_boot: cfg.run.n_boot, seed: cfg.run.master_seed, ..TailFitOptions::default() };
    let fit = fit_tail_exponent(&ccdf, &fit_opts)?;
    let mut text = String::from("epsilon,ccdf\n");
    for (eps, q) in ccdf.points() {
        text.push_str(&format!("{},{}\n", format_value(eps), format_value(q)));
    }
    out.table("ccdf.csv", text);
    let headline = format!(
        "tail exponent at k = {k}: beta = {:.3}, 95% CI [{:.3}, {:.3}]",
        fit.beta_hat, fit.ci.0, fit.ci.1
    );
    out.report("tailfit.json", &TailfitReport { problem: p.name(), k, n, rescale, fit })?;
    Ok(headline)
}

#[derive(Clone, Debug, Serialize)]
pub struct MgfRow {
    pub k: usize,
    pub log_value: f64,
    pub overflow: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HardExampleReport {
    pub d: f64,
    pub p_max: f64,
    pub lambda: f64,
    pub beta_tilde: f64,
    /// Exact `log E[exp(λ((k+h)^{z/2}|x_k|)^β̃)]` by enumeration.
    pub mgf: Vec<MgfRow>,
    /// Whether the sequence increases from `k = 10` to the last enumerated
    /// step (when that range exists).
    pub mgf_increasing_from_10: Option<bool>,
    pub certificate_beta: f64,
    pub witness: Option<EpsilonWitness>,
    /// First `k ≤` horizon where the certified log lower bound exceeds the
    /// level.
    pub certificate_horizon: usize,
    pub certificate_level: f64,
    pub first_k_over_level: Option<usize>,
    pub log_lower_bound_at_horizon: Option<f64>,
}

fn hard_example(
    cfg: &ExperimentConfig,
    inst: &Instance,
    opts: &RunOptions,
    out: &mut Artifacts,
) -> Result<String, CliError> {
    let Problem::Hard(spec) = &inst.problem else {
        return Err(CliError::Schema("the hard_example experiment needs a hard_example problem".into()));
    };
    let last = cfg.run.k_max.min(ENUMERATION_CAP);
    let mgf = (0..=last)
        .map(|k| {
            spec.exact_rescaled_mgf(k, MGF_LAMBDA, MGF_BETA)
                .map(|m| MgfRow { k, log_value: m.log_value, overflow: m.overflow })
        })
        .collect::<crate::error::Result<Vec<_>>>()?;
    let mgf_increasing_from_10 =
        (last > 10).then(|| mgf[10..].windows(2).all(|w| w[1].log_value > w[0].log_value));
    let mut text = String::from("k,log_mgf\n");
    for r in &mgf {
        text.push_str(&format!("{},{}\n", r.k, format_value(r.log_value)));
    }
    out.table("mgf.csv", text);

    let witness = spec.find_epsilon_witness(CERT_BETA, CERT_MAX_J, CERT_HORIZON);
    let (mut first_k_over_level, mut at_horizon) = (None, None);
    if let Some(w) = &witness {
        let path = spec.mgf_lower_bound_path(CERT_HORIZON, MGF_LAMBDA, CERT_BETA, w.k_eps);
        first_k_over_level = path.iter().find(|(_, l)| *l > CERT_LOG_LEVEL).map(|(k, _)| *k);
        at_horizon = path.last().map(|(_, l)| *l);
        let mut text = String::from("k,log_lower_bound\n");
        // log-spaced thinning of the (long) path
        let mut next = 1usize;
        for &(k, l) in &path {
            if k + 1 >= next || k == CERT_HORIZON {
                text.push_str(&format!("{k},{}\n", format_value(l)));
                next = ((k + 1) as f64 * 1.05).ceil() as usize;
            }
        }
        out.table("lower_bound.csv", text);
    }

    let sim = simulate_ensemble(cfg, inst, opts)?;
    let wc = inst.curve(BoundVariant::WorstCase, cfg.run.delta, 0, &(0..=cfg.run.k_max).collect::<Vec<_>>())?;
    out.table("envelope.csv", envelope_table(&sim.ens, Some(&wc)));

    let headline = format!(
        "D = {}, mgf increasing from k = 10: {}, certificate: {}",
        spec.d(),
        mgf_increasing_from_10.map_or("n/a".to_string(), |b| b.to_string()),
        match (&witness, first_k_over_level) {
            (Some(w), Some(k)) => format!("eps = {}, log lower bound > {CERT_LOG_LEVEL} at k = {k}", w.eps),
            (Some(w), None) => format!("eps = {}, level not reached by k = {CERT_HORIZON}", w.eps),
            (None, _) => "no admissible eps".to_string(),
        }
    );
    out.report(
        "hard_example.json",
        &HardExampleReport {
            d: spec.d(),
            p_max: spec.p_max(),
            lambda: MGF_LAMBDA,
            beta_tilde: MGF_BETA,
            mgf,
            mgf_increasing_from_10,
            certificate_beta: CERT_BETA,
            witness,
            certificate_horizon: CERT_HORIZON,
            certificate_level: CERT_LOG_LEVEL,
            first_k_over_level,
            log_lower_bound_at_horizon: at_horizon,
        },
    )?;
    Ok(headline)
}

#[derive(Clone, Debug, Serialize)]
pub struct MachinerySummary {
    pub nominal: Vec<MachineryReport>,
    /// `λ×10` on the recursion and `drift/100` on the supermartingale.
    pub controls: Vec<MachineryReport>,
    /// Runs with the configured corruption, when one is set.
    pub configured: Vec<MachineryReport>,
    pub nominal_passed: bool,
    pub controls_rejected: bool,
}

fn machinery(cfg: &ExperimentConfig, inst: &Instance, opts: &RunOptions, out: &mut Artifacts) -> Result<String, CliError> {
    let ledger = inst.ledger.as_ref().ok_or_else(|| {
        CliError::Schema("verify_machinery needs a constant ledger (multiplicative noise requires z = 1)".into())
    })?;
    let m = match ledger {
        Ledger::Mult(l) => Machinery::Mult(l),
        Ledger::Add(l) => Machinery::Add(l),
    };
    let p = inst.problem.sa();
    let o = |corruption| MachineryOptions {
        k_range: 0..=cfg.run.k_max,
        n: cfg.run.n,
        master_seed: cfg.run.master_seed,
        workers: opts.workers,
        corruption,
    };
    let both = |c| -> Result<Vec<MachineryReport>, CliError> {
        Ok(vec![check_mgf_recursion(p, m, &o(c))?, check_supermartingale(p, m, &o(c))?])
    };
    let nominal = both(Corruption::None)?;
    let controls =
        vec![check_mgf_recursion(p, m, &o(CONTROL_LAMBDA))?, check_supermartingale(p, m, &o(CONTROL_DRIFT))?];
    let configured = if cfg.run.corruption == Corruption::None { Vec::new() } else { both(cfg.run.corruption)? };
    let s = MachinerySummary {
        nominal_passed: nominal.iter().all(|r| r.passed),
        controls_rejected: controls.iter().all(|r| !r.passed),
        nominal,
        controls,
        configured,
    };
    let verdict = |r: &MachineryReport| format!("{} {}", r.check, if r.passed { "pass" } else { "fail" });
    let headline = format!(
        "nominal: {}; controls: {}",
        s.nominal.iter().map(verdict).collect::<Vec<_>>().join(", "),
        s.controls.iter().map(verdict).collect::<Vec<_>>().join(", ")
    );
    out.report("machinery.json", &s)?;
    Ok(headline)
}
