use super::{HarnessError, Result};
use crate::bfgs::InitMode;
use crate::objective::{load_libsvm, partition, synth_logistic, synth_quadratic, LocalObjective, Problem};
use crate::runtime::{DelayModel, Termination};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Overrides `output_dir` from the config file.
pub const OUT_DIR_ENV: &str = "DAVEQN_OUT_DIR";

/// The config file as written: a flat TOML table.
///
/// ```toml
/// problem = "logistic"        # logistic | quadratic | libsvm
/// n = 8
/// p = 20
/// m_per = 100
/// condition_target = 100.0
/// lambda = 0.1
/// runtime = "sim"             # sim | tcp
/// delay_model = "uniform"     # round_robin | uniform | heavy_tail
/// delay_param = 5.0
/// seed = 3
/// init = "scaled_identity"    # scaled_identity | local_smoothness | exact
/// init_scale = 1.0
/// target_subopt = 1e-10
/// max_updates = 100000
/// repetitions = 1
/// output_dir = "out"
/// name = "run"
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub problem: Option<String>,
    pub libsvm_path: Option<PathBuf>,
    pub n: Option<usize>,
    pub p: Option<usize>,
    pub m_per: Option<usize>,
    pub condition_target: Option<f64>,
    pub lambda: Option<f64>,
    pub data_seed: Option<u64>,
    pub runtime: Option<String>,
    pub delay_model: Option<String>,
    pub delay_param: Option<f64>,
    pub schedule: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub init: Option<String>,
    pub init_scale: Option<f64>,
    pub target_subopt: Option<f64>,
    pub max_updates: Option<u64>,
    pub max_step: Option<f64>,
    pub repetitions: Option<u32>,
    pub output_dir: Option<PathBuf>,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Logistic {
        p: usize,
        m_per: usize,
        condition_target: f64,
        lambda: f64,
    },
    Quadratic {
        p: usize,
        condition_target: f64,
    },
    Libsvm {
        path: PathBuf,
        lambda: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuntimeChoice {
    Simulated,
    Tcp,
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub source: ProblemSource,
    pub n: usize,
    pub data_seed: u64,
    pub runtime: RuntimeChoice,
    pub delay_model: DelayModel,
    pub seed: u64,
    pub init: InitMode,
    pub termination: Termination,
    pub max_step: Option<f64>,
    pub repetitions: u32,
    pub output_dir: PathBuf,
    pub name: String,
}

fn bad(field: &str, msg: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        field: field.into(),
        msg: msg.into(),
    }
}

fn required<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| bad(field, "missing"))
}

fn positive(v: f64, field: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(bad(field, format!("must be a positive finite number, got {v}")))
    }
}

fn at_least_one(v: usize, field: &str) -> Result<usize> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(bad(field, "must be at least 1"))
    }
}

impl RawConfig {
    pub fn validate(self) -> Result<Experiment> {
        let n = at_least_one(required(self.n, "n")?, "n")?;
        let kind = required(self.problem.as_deref(), "problem")?;
        let synthetic_only = [
            ("p", self.p.is_some()),
            ("m_per", self.m_per.is_some()),
            ("condition_target", self.condition_target.is_some()),
            ("data_seed", self.data_seed.is_some()),
        ];
        let source = match kind {
            "logistic" | "quadratic" => {
                if self.libsvm_path.is_some() {
                    return Err(bad("libsvm_path", format!("not allowed with problem = \"{kind}\"")));
                }
                let p = at_least_one(required(self.p, "p")?, "p")?;
                let condition_target = positive(required(self.condition_target, "condition_target")?, "condition_target")?;
                if condition_target < 1.0 {
                    return Err(bad("condition_target", "must be at least 1"));
                }
                if kind == "logistic" {
                    let lambda = positive(required(self.lambda, "lambda")?, "lambda")?;
                    ProblemSource::Logistic {
                        p,
                        m_per: at_least_one(required(self.m_per, "m_per")?, "m_per")?,
                        condition_target,
                        lambda,
                    }
                } else {
                    for (field, set) in [("m_per", self.m_per.is_some()), ("lambda", self.lambda.is_some())] {
                        if set {
                            return Err(bad(field, "not used by problem = \"quadratic\""));
                        }
                    }
                    ProblemSource::Quadratic { p, condition_target }
                }
            }
            "libsvm" => {
                if let Some((field, _)) = synthetic_only.iter().find(|(_, set)| *set) {
                    return Err(bad(field, "not allowed with problem = \"libsvm\""));
                }
                ProblemSource::Libsvm {
                    path: required(self.libsvm_path, "libsvm_path")?,
                    lambda: positive(required(self.lambda, "lambda")?, "lambda")?,
                }
            }
            other => return Err(bad("problem", format!("unknown problem `{other}`"))),
        };

        let runtime = match self.runtime.as_deref().unwrap_or("sim") {
            "sim" => RuntimeChoice::Simulated,
            "tcp" => RuntimeChoice::Tcp,
            other => return Err(bad("runtime", format!("unknown runtime `{other}`"))),
        };
        let model_name = self.delay_model.as_deref().unwrap_or("round_robin");
        if model_name != "schedule" && self.schedule.is_some() {
            return Err(bad("schedule", "only used with delay_model = \"schedule\""));
        }
        let delay_model = match model_name {
            "round_robin" => {
                if self.delay_param.is_some() {
                    return Err(bad("delay_param", "not used by round_robin"));
                }
                DelayModel::FixedRoundRobin
            }
            "uniform" | "heavy_tail" => {
                let d = required(self.delay_param, "delay_param")?;
                if !(d >= 0.0 && d.is_finite()) {
                    return Err(bad("delay_param", format!("must be finite and >= 0, got {d}")));
                }
                if model_name == "uniform" {
                    DelayModel::UniformBounded(d)
                } else {
                    DelayModel::HeavyTailBoundedMean(d)
                }
            }
            "schedule" => {
                let s = required(self.schedule, "schedule")?;
                if let Some(&w) = s.iter().find(|&&w| w >= n) {
                    return Err(bad("schedule", format!("worker {w} out of range for n = {n}")));
                }
                DelayModel::Schedule(s)
            }
            other => return Err(bad("delay_model", format!("unknown delay model `{other}`"))),
        };
        if runtime == RuntimeChoice::Tcp && model_name != "round_robin" {
            return Err(bad("delay_model", "the tcp runtime takes delays from the network"));
        }

        let init_name = self.init.as_deref().unwrap_or("local_smoothness");
        if init_name != "scaled_identity" && self.init_scale.is_some() {
            return Err(bad("init_scale", "only used with init = \"scaled_identity\""));
        }
        let init = match init_name {
            "scaled_identity" => InitMode::ScaledIdentity(positive(required(self.init_scale, "init_scale")?, "init_scale")?),
            "local_smoothness" => InitMode::LocalSmoothness,
            "exact" => InitMode::ExactLocalHessian,
            other => return Err(bad("init", format!("unknown init mode `{other}`"))),
        };

        if let Some(t) = self.target_subopt {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(bad("target_subopt", format!("must be finite and >= 0, got {t}")));
            }
        }
        let max_updates = self.max_updates.unwrap_or(100_000);
        if max_updates == 0 {
            return Err(bad("max_updates", "must be at least 1"));
        }
        let max_step = self.max_step.map(|s| positive(s, "max_step")).transpose()?;
        let repetitions = self.repetitions.unwrap_or(1);
        if repetitions == 0 {
            return Err(bad("repetitions", "must be at least 1"));
        }
        let name = self.name.unwrap_or_else(|| "run".into());
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(bad("name", "must be a non-empty file stem"));
        }
        let seed = self.seed.unwrap_or(0);

        Ok(Experiment {
            source,
            n,
            data_seed: self.data_seed.unwrap_or(seed),
            runtime,
            delay_model,
            seed,
            init,
            termination: Termination {
                max_updates,
                target_subopt: self.target_subopt,
            },
            max_step,
            repetitions,
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from(".")),
            name,
        })
    }
}

pub fn parse_config(text: &str) -> Result<Experiment> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        // toml reports unknown or mistyped keys inside the message.
        HarnessError::Config {
            field: e.span().map(|s| format!("byte {}", s.start)).unwrap_or_else(|| "<file>".into()),
            msg,
        }
    })?;
    raw.validate()
}

/// Reads and validates a config file. The output directory is taken from
/// the environment when set.
pub fn load_config(path: impl AsRef<Path>) -> Result<Experiment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut exp = parse_config(&text)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        exp.output_dir = PathBuf::from(dir);
    }
    Ok(exp)
}

impl Experiment {
    /// The per-worker objectives. Synthetic data depend only on `data_seed`,
    /// so every process building the same config gets the same problem.
    pub fn build_problem(&self) -> Result<Problem> {
        Ok(match &self.source {
            ProblemSource::Logistic {
                p,
                m_per,
                condition_target,
                lambda,
            } => synth_logistic(self.data_seed, self.n, *p, *m_per, *condition_target, *lambda).problem()?,
            ProblemSource::Quadratic { p, condition_target } => {
                synth_quadratic(self.data_seed, self.n, *p, *condition_target)
            }
            ProblemSource::Libsvm { path, lambda } => {
                let data = load_libsvm(path, None)?;
                if data.len() < self.n {
                    return Err(bad("n", format!("{} workers but only {} samples", self.n, data.len())));
                }
                let locals = partition(&data, self.n, self.data_seed)?
                    .into_iter()
                    .map(|s| LocalObjective::logistic(s, *lambda))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                Problem::new(locals)?
            }
        })
    }

    pub fn output_path(&self, suffix: &str) -> PathBuf {
        self.output_dir.join(format!("{}{suffix}", self.name))
    }
}
