use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::verify::Corruption;

/// Named experiment recipes; the CLI subcommands mirror these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Simulate,
    Bounds,
    Audit,
    Tailfit,
    HardExample,
    VerifyMachinery,
    RlDemo,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Simulate,
        Experiment::Bounds,
        Experiment::Audit,
        Experiment::Tailfit,
        Experiment::HardExample,
        Experiment::VerifyMachinery,
        Experiment::RlDemo,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Bounds => "bounds",
            Experiment::Audit => "audit",
            Experiment::Tailfit => "tailfit",
            Experiment::HardExample => "hard_example",
            Experiment::VerifyMachinery => "verify_machinery",
            Experiment::RlDemo => "rl_demo",
        }
    }

    /// Whether the recipe reports bound curves, so that failing stepsize
    /// conditions stop it (unless forced).
    pub fn gated(&self) -> bool {
        !matches!(self, Experiment::Tailfit | Experiment::HardExample)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub problem: ProblemBlock,
    pub schedule: ScheduleBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemBlock {
    HardExample {
        a: f64,
        n: f64,
        #[serde(default = "one")]
        x0: f64,
    },
    /// `F(x, W) = γx + c + sW`, `W ~ N(0,1)`.
    Affine {
        gamma: f64,
        #[serde(default)]
        c: f64,
        #[serde(default = "one")]
        noise_std: f64,
        x0: f64,
    },
    /// `F(x, Y) = (A(Y) + I)x + b(Y)` over a finite law, remodelled into its
    /// Lyapunov geometry.
    LinearSa { atoms: Vec<LinearAtom>, x0: Vec<f64> },
    Mdp {
        source: MdpSource,
        algorithm: RlAlgorithm,
        /// Behaviour policy rows; uniform when absent.
        #[serde(default)]
        behavior: Option<Vec<Vec<f64>>>,
        /// Target policy rows (off-policy TD, TD-LFA); uniform when absent.
        #[serde(default)]
        target: Option<Vec<Vec<f64>>>,
        /// Feature rows `φ(s)ᵀ` (TD-LFA); identity when absent.
        #[serde(default)]
        features: Option<Vec<Vec<f64>>>,
        /// Lookahead of off-policy TD.
        #[serde(default = "one_usize")]
        n_step: usize,
        /// Initial iterate; zeros when absent.
        #[serde(default)]
        x0: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearAtom {
    pub p: f64,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpSource {
    File(PathBuf),
    Garnet { n_states: usize, n_actions: usize, branching: usize, gamma: f64, seed: u64 },
    ConstantReward { n_states: usize, n_actions: usize, gamma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RlAlgorithm {
    QLearning,
    TdLfa,
    OffPolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleBlock {
    pub alpha: f64,
    #[serde(default)]
    pub h: HSpec,
    #[serde(default = "one")]
    pub z: f64,
}

/// `h` as a number or `"auto"` (smallest value meeting the stepsize
/// condition of the instance).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HSpec {
    Value(f64),
    #[default]
    #[serde(with = "auto_keyword")]
    Auto,
}

mod auto_keyword {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("auto")
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "auto" {
            Ok(())
        } else {
            Err(D::Error::custom(format!("expected a number or \"auto\", got {s:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub n: usize,
    pub k_max: usize,
    /// Anchor `K` of the maximal bounds.
    #[serde(default)]
    pub k_anchor: usize,
    pub delta: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Bootstrap resamples of the tail fit.
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    /// Extra corruption for `verify_machinery` (the negative controls always
    /// run).
    #[serde(default)]
    pub corruption: Corruption,
}

impl Default for RunBlock {
    fn default() -> Self {
        RunBlock {
            n: 1000,
            k_max: 1000,
            k_anchor: 0,
            delta: 0.05,
            master_seed: 0,
            n_boot: default_boot(),
            corruption: Corruption::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { directory: PathBuf::from("salab-out"), formats: default_formats() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// Comma-separated tables.
    Csv,
    /// Reports besides the manifest (which is always written).
    Json,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_boot() -> usize {
    crate::verify::N_BOOT
}
fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| CliError::Schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Recipe defaults used when no configuration file is given.
    pub fn default_for(experiment: Experiment) -> Self {
        let hard = ProblemBlock::HardExample { a: 0.5, n: 1.0, x0: 1.0 };
        let auto = |alpha| ScheduleBlock { alpha, h: HSpec::Auto, z: 1.0 };
        let run = |n, k_max| RunBlock { n, k_max, ..RunBlock::default() };
        let (problem, schedule, run) = match experiment {
            Experiment::Simulate | Experiment::Bounds | Experiment::Audit => (hard, auto(4.0), run(1000, 1000)),
            Experiment::VerifyMachinery => (hard, auto(4.0), run(10_000, 50)),
            // the heavy tail needs a large first step, outside Condition 1
            Experiment::Tailfit => (hard, ScheduleBlock { alpha: 4.0, h: HSpec::Value(9.0), z: 1.0 }, run(100_000, 1000)),
            Experiment::HardExample => (hard, ScheduleBlock { alpha: 4.4, h: HSpec::Value(9.0), z: 1.0 }, run(10_000, 1000)),
            Experiment::RlDemo => (
                ProblemBlock::Mdp {
                    source: MdpSource::ConstantReward { n_states: 2, n_actions: 2, gamma: 0.9 },
                    algorithm: RlAlgorithm::QLearning,
                    behavior: None,
                    target: None,
                    features: None,
                    n_step: 1,
                    x0: None,
                },
                ScheduleBlock { alpha: 84.0, h: HSpec::Value(336.0), z: 1.0 },
                run(2000, 10_000),
            ),
        };
        ExperimentConfig { experiment, problem, schedule, run, output: OutputBlock::default() }
    }

    /// Schema-level checks that need no computation.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Schema(m));
        let s = &self.schedule;
        if !(s.alpha > 0.0 && s.alpha.is_finite()) {
            return bad(format!("schedule.alpha must be positive, got {}", s.alpha));
        }
        if !(s.z > 0.0 && s.z <= 1.0) {
            return bad(format!("schedule.z must lie in (0, 1], got {}", s.z));
        }
        if let HSpec::Value(h) = s.h {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("schedule.h must be positive, got {h}"));
            }
        }
        let r = &self.run;
        if r.n == 0 {
            return bad("run.n must be >= 1".into());
        }
        if !(r.delta > 0.0 && r.delta < 1.0) {
            return bad(format!("run.delta must lie in (0, 1), got {}", r.delta));
        }
        if r.k_anchor > r.k_max {
            return bad(format!("run.k_anchor = {} exceeds run.k_max = {}", r.k_anchor, r.k_max));
        }
        if self.output.formats.is_empty() {
            return bad("output.formats must not be empty".into());
        }
        match (&self.experiment, &self.problem) {
            (Experiment::HardExample, p) if !matches!(p, ProblemBlock::HardExample { .. }) => {
                bad("the hard_example experiment needs a hard_example problem".into())
            }
            (Experiment::RlDemo, p) if !matches!(p, ProblemBlock::Mdp { .. }) => {
                bad("the rl_demo experiment needs an mdp problem".into())
            }
            (Experiment::Tailfit, _) if r.n < 10_000 => bad(format!("tailfit needs run.n >= 10000, got {}", r.n)),
            (Experiment::VerifyMachinery, _) if r.n < 2 => bad("verify_machinery needs run.n >= 2".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        for e in Experiment::ALL {
            let c = ExperimentConfig::default_for(e);
            c.validate().unwrap();
            let s = serde_json::to_string_pretty(&c).unwrap();
            assert_eq!(ExperimentConfig::from_json_str(&s).unwrap(), c);
        }
    }

    #[test]
    fn h_accepts_number_or_auto() {
        let base = r#"{"experiment":"bounds","problem":{"kind":"hard_example","a":0.5,"n":1},"schedule":{"alpha":4,"h":H}}"#;
        let c = ExperimentConfig::from_json_str(&base.replace('H', "\"auto\"")).unwrap();
        assert_eq!(c.schedule.h, HSpec::Auto);
        let c = ExperimentConfig::from_json_str(&base.replace('H', "600")).unwrap();
        assert_eq!(c.schedule.h, HSpec::Value(600.0));
        assert!(ExperimentConfig::from_json_str(&base.replace('H', "\"soon\"")).is_err());
    }

    #[test]
    fn schema_errors() {
        let ok = r#"{"experiment":"bounds","problem":{"kind":"hard_example","a":0.5,"n":1},"schedule":{"alpha":4}}"#;
        ExperimentConfig::from_json_str(ok).unwrap();
        for bad in [
            ok.replace("\"alpha\":4", "\"alpha\":4,\"beta\":1"),
            ok.replace("bounds", "plots"),
            ok.replace("\"alpha\":4", "\"alpha\":-4"),
            ok.replace("bounds", "rl_demo"),
            ok.replace("}}", "},\"run\":{\"n\":10,\"k_max\":5,\"delta\":2}}"),
        ] {
            assert!(matches!(ExperimentConfig::from_json_str(&bad), Err(CliError::Schema(_))), "{bad}");
        }
    }
}
