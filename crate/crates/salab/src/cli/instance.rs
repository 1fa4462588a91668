use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::config::{ExperimentConfig, HSpec, MdpSource, ProblemBlock, RlAlgorithm};
use super::CliError;
use crate::bounds::{
    build_add_ledger, build_mult_ledger, AddInputs, AddLedger, BoundCurve, BoundVariant, ConditionClause,
    ConditionReport, MultInputs, MultLedger, Regime,
};
use crate::core::{NormKind, NormSpec, StepSchedule};
use crate::engine::{AffineProblem, NoiseModel, SAProblem};
use crate::error::Error;
use crate::hard_example::HardExampleSpec;
use crate::linear_sa::{remodel, FiniteLinearLaw};
use crate::moreau::{choose_mu, MoreauConfig};
use crate::rl::{tdlfa_build, ISFactors, OffPolicyTD, Policy, QLearning, QLearningConstants, TabularMDP};

pub enum Problem {
    Hard(HardExampleSpec),
    QLearning(QLearning),
    Other(Box<dyn SAProblem>),
}

impl Problem {
    pub fn sa(&self) -> &dyn SAProblem {
        match self {
            Problem::Hard(p) => p,
            Problem::QLearning(p) => p,
            Problem::Other(p) => p.as_ref(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ledger {
    Mult(MultLedger),
    Add(AddLedger),
}

/// A configuration resolved into a problem, a schedule with a numeric `h`,
/// and (when the noise class admits one) the constant ledger.
pub struct Instance {
    pub problem: Problem,
    pub schedule: StepSchedule,
    pub ledger: Option<Ledger>,
    pub conditions: ConditionReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct InstanceSummary {
    pub name: String,
    pub dim: usize,
    pub gamma_c: f64,
    pub noise: NoiseModel,
    pub norm_c: NormKind,
    pub x_star: Vec<f64>,
    pub x0: Vec<f64>,
}

/// Errors from building an instance are configuration errors, except a
/// violated condition.
fn invalid(e: Error) -> CliError {
    match e {
        Error::ConditionViolated(m) => CliError::Condition(m),
        Error::NoConvergence { .. } | Error::NonFinite { .. } => CliError::Compute(e),
        other => CliError::Schema(other.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Schema(format!("{what} must be a non-empty rectangular array")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn policy(rows: &Option<Vec<Vec<f64>>>, mdp: &TabularMDP) -> Result<Policy, CliError> {
    match rows {
        Some(r) => Policy::new(r.clone()).map_err(invalid),
        None => Ok(Policy::uniform(mdp.n_states(), mdp.n_actions())),
    }
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Problem, CliError> {
    Ok(match &cfg.problem {
        ProblemBlock::HardExample { a, n, x0 } => {
            // the schedule is attached once h is resolved
            let provisional = StepSchedule::harmonic(1e-3, 1e3).map_err(invalid)?;
            Problem::Hard(HardExampleSpec::new(*a, *n, *x0, provisional).map_err(invalid)?)
        }
        ProblemBlock::Affine { gamma, c, noise_std, x0 } => {
            Problem::Other(Box::new(AffineProblem::scalar(*gamma, *c, *noise_std, *x0).map_err(invalid)?))
        }
        ProblemBlock::LinearSa { atoms, x0 } => {
            let atoms = atoms
                .iter()
                .map(|a| Ok((a.p, matrix(&a.a, "linear_sa atom matrix")?, DVector::from_vec(a.b.clone()))))
                .collect::<Result<Vec<_>, CliError>>()?;
            let law = FiniteLinearLaw::new(atoms).map_err(invalid)?;
            Problem::Other(Box::new(remodel(law, x0.clone()).map_err(invalid)?))
        }
        ProblemBlock::Mdp { source, algorithm, behavior, target, features, n_step, x0 } => {
            let mdp = match source {
                MdpSource::File(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                    TabularMDP::from_json_str(&text).map_err(invalid)?
                }
                MdpSource::Garnet { n_states, n_actions, branching, gamma, seed } => {
                    TabularMDP::garnet(*n_states, *n_actions, *branching, *gamma, *seed).map_err(invalid)?
                }
                MdpSource::ConstantReward { n_states, n_actions, gamma } => {
                    TabularMDP::constant_reward(*n_states, *n_actions, *gamma).map_err(invalid)?
                }
            };
            let pi_b = policy(behavior, &mdp)?;
            let pi = policy(target, &mdp)?;
            match algorithm {
                RlAlgorithm::QLearning => {
                    let x0 = x0.clone().unwrap_or_else(|| vec![0.0; mdp.n_pairs()]);
                    Problem::QLearning(QLearning::new(mdp, pi_b, x0).map_err(invalid)?)
                }
                RlAlgorithm::OffPolicy => {
                    let x0 = x0.clone().unwrap_or_else(|| vec![0.0; mdp.n_pairs()]);
                    let factors = ISFactors::ratio(&pi, &pi_b, *n_step).map_err(invalid)?;
                    Problem::Other(Box::new(OffPolicyTD::new(mdp, pi_b, &pi, factors, x0).map_err(invalid)?))
                }
                RlAlgorithm::TdLfa => {
                    let phi = match features {
                        Some(rows) => matrix(rows, "features")?,
                        None => DMatrix::identity(mdp.n_states(), mdp.n_states()),
                    };
                    let x0 = x0.clone().unwrap_or_else(|| vec![0.0; phi.ncols()]);
                    let td = tdlfa_build(&mdp, &pi, &phi).map_err(invalid)?;
                    Problem::Other(Box::new(td.into_problem(x0).map_err(invalid)?))
                }
            }
        }
    })
}

/// Smoothing configuration for a contraction norm: the norm itself when
/// `½‖·‖²` is smooth; for the max-norm the ℓ_p recipe (`d ≥ 3`) or the
/// Euclidean norm with the largest admissible μ.
pub fn default_moreau(norm_c: &NormSpec, gamma_c: f64) -> Result<MoreauConfig, CliError> {
    match norm_c.kind {
        NormKind::MaxNorm if norm_c.dim >= 3 => MoreauConfig::q_learning_recipe(norm_c.dim, gamma_c).map_err(invalid),
        NormKind::MaxNorm => {
            let s = NormSpec::euclidean(norm_c.dim);
            let mu = choose_mu(norm_c, &s, gamma_c, None).map_err(invalid)?;
            MoreauConfig::new(norm_c.clone(), s, mu).map_err(invalid)
        }
        _ => MoreauConfig::new(norm_c.clone(), norm_c.clone(), 1.0).map_err(invalid),
    }
}

impl Instance {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let mut problem = build_problem(cfg)?;
        let sched = &cfg.schedule;
        let h = match sched.h {
            HSpec::Value(h) => Some(h),
            HSpec::Auto => None,
        };

        let p = problem.sa();
        let norm = p.norm_c();
        let x0_err = norm.dist(p.x0(), p.x_star());
        let gamma_c = p.gamma_c();
        let (ledger, mut conditions) = match p.noise() {
            NoiseModel::Multiplicative { sigma } if sched.z == 1.0 => {
                let l = build_mult_ledger(&MultInputs {
                    gamma_c,
                    sigma,
                    x0_err,
                    xstar_norm: norm.eval(p.x_star()),
                    moreau: default_moreau(norm, gamma_c)?,
                    alpha: sched.alpha,
                    h,
                })
                .map_err(invalid)?;
                let c = l.conditions.clone();
                (Some(Ledger::Mult(l)), c)
            }
            NoiseModel::Multiplicative { .. } => {
                let mut r = ConditionReport::default();
                r.clauses.push(ConditionClause::new("z = 1 (multiplicative-noise bounds)", sched.z, ">=", 1.0, true));
                (None, r)
            }
            NoiseModel::AdditiveSubgaussian { sigma_bar, c_d } => {
                let l = build_add_ledger(&AddInputs {
                    gamma_c,
                    sigma_bar,
                    c_d,
                    x0_err,
                    moreau: default_moreau(norm, gamma_c)?,
                    alpha: sched.alpha,
                    h,
                    z: sched.z,
                })
                .map_err(invalid)?;
                let c = l.conditions.clone();
                (Some(Ledger::Add(l)), c)
            }
        };
        let schedule = match &ledger {
            Some(Ledger::Mult(l)) => l.schedule,
            Some(Ledger::Add(l)) => l.schedule,
            None => {
                let h = h.ok_or_else(|| CliError::Schema("h = \"auto\" needs a constant ledger; give h explicitly".into()))?;
                StepSchedule::new(sched.alpha, h, sched.z).map_err(invalid)?
            }
        };
        if let Problem::QLearning(q) = &problem {
            // The tabular bound only pins α; the generic additive clauses
            // (whose h is astronomically conservative here) stay visible but
            // do not gate.
            for c in &mut conditions.clauses {
                c.name = format!("generic additive: {}", c.name);
                c.gating = false;
            }
            let g = q.constants().gamma_hat;
            conditions.clauses.push(ConditionClause::new("alpha0 <= 1", schedule.alpha0(), "<=", 1.0, true));
            conditions.clauses.push(ConditionClause::new("alpha > 2/(1 - gamma_hat)", sched.alpha, ">", 2.0 / (1.0 - g), true));
            if sched.z != 1.0 {
                conditions.clauses.push(ConditionClause::new("z = 1 (Q-learning bound)", sched.z, ">=", 1.0, true));
            }
        }
        if let Problem::Hard(spec) = &mut problem {
            *spec = HardExampleSpec::new(spec.a, spec.n, spec.x0, schedule).map_err(invalid)?;
        }
        Ok(Instance { problem, schedule, ledger, conditions })
    }

    pub fn summary(&self) -> InstanceSummary {
        let p = self.problem.sa();
        InstanceSummary {
            name: p.name(),
            dim: p.dim(),
            gamma_c: p.gamma_c(),
            noise: p.noise(),
            norm_c: p.norm_c().kind.clone(),
            x_star: p.x_star().to_vec(),
            x0: p.x0().to_vec(),
        }
    }

    pub fn q_constants(&self) -> Option<QLearningConstants> {
        match &self.problem {
            Problem::QLearning(q) => Some(q.constants()),
            _ => None,
        }
    }

    /// Whether an almost-sure envelope exists (multiplicative noise or
    /// Q-learning, harmonic schedule).
    pub fn has_worst_case(&self) -> bool {
        self.schedule.z == 1.0 && (matches!(self.ledger, Some(Ledger::Mult(_))) || self.q_constants().is_some())
    }

    /// The maximal bound matching the instance.
    pub fn primary(&self) -> Option<BoundVariant> {
        if self.q_constants().is_some() {
            return Some(BoundVariant::QLearning);
        }
        match self.ledger.as_ref()? {
            Ledger::Mult(l) => Some(match l.regime {
                Regime::Positive => BoundVariant::MultDpos,
                Regime::Zero => BoundVariant::MultD0,
                Regime::Negative => BoundVariant::WorstCase,
            }),
            Ledger::Add(l) => Some(l.primary_variant()),
        }
    }

    /// Every curve the `bounds` recipe emits for this instance.
    pub fn bound_variants(&self) -> Vec<BoundVariant> {
        let mut v = Vec::new();
        if self.q_constants().is_some() {
            v.extend([BoundVariant::QLearning, BoundVariant::WorstCase]);
        }
        match &self.ledger {
            Some(Ledger::Mult(l)) => v.extend(match l.regime {
                Regime::Positive => {
                    vec![BoundVariant::MultDpos, BoundVariant::MultPrime, BoundVariant::WorstCase, BoundVariant::FixedTimeMult]
                }
                Regime::Zero => vec![BoundVariant::MultD0, BoundVariant::WorstCase],
                Regime::Negative => vec![BoundVariant::WorstCase],
            }),
            Some(Ledger::Add(l)) => v.extend([l.primary_variant(), BoundVariant::AddVille, BoundVariant::FixedTimeAdd]),
            None => {}
        }
        v
    }

    /// One bound curve. Conditions are not re-checked here: the driver
    /// gates on them (or records that the run was forced).
    pub fn curve(&self, v: BoundVariant, delta: f64, k_anchor: usize, ks: &[usize]) -> Result<BoundCurve, CliError> {
        let s = &self.schedule;
        if let Problem::QLearning(q) = &self.problem {
            match v {
                BoundVariant::QLearning => {
                    let c = q.constants();
                    return Ok(BoundCurve::from_fn(ks.iter().copied(), delta, k_anchor, v, |k| {
                        crate::rl::maximal_value(c.c_q, c.gamma_hat, s.alpha, s.h, delta, k_anchor, k)
                    }));
                }
                BoundVariant::WorstCase => {
                    let wc = q.worst_case(s.alpha, s.h)?;
                    return Ok(BoundCurve::from_fn(ks.iter().copied(), delta, k_anchor, v, |k| wc.at(k).powi(2)));
                }
                _ => {}
            }
        }
        Ok(match &self.ledger {
            Some(Ledger::Mult(l)) => l.bound_curve_unchecked(v, delta, k_anchor, ks)?,
            Some(Ledger::Add(l)) => l.bound_curve_unchecked(v, delta, k_anchor, ks)?,
            None => return Err(CliError::Schema(format!("no {} bound for this instance", v.as_str()))),
        })
    }
}
