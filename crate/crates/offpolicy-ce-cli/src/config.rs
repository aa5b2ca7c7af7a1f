//! Experiment documents: environment, behaviour policy, estimator and search
//! settings, trials and seeds.

use std::path::{Path, PathBuf};

use offpolicy_ce::ce::CeConfig;
use offpolicy_ce::env::{CartPoleParams, LinkPendulumParams, SelfDriveTerminal};
use offpolicy_ce::lstd::{Performance, PredictConfig, Solver};
use offpolicy_ce::policy::ScaleParam;
use offpolicy_ce::schedule::Schedule;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Free-form notes; ignored by the runner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub environment: EnvSpec,
    /// Flat behaviour parameter vector w_b.
    pub behaviour: Vec<f64>,
    pub initial_model: ModelSpec,
    pub performance: PerformanceSpec,
    /// Divide the performance scale by |Ĵ(w_b)| measured on each path.
    #[serde(default)]
    pub normalize_performance: bool,
    pub predict: PredictSpec,
    pub ce: CeConfig,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    pub trials: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Evaluate Ĵ at the reported mean every this many iterations; 0 disables.
    #[serde(default)]
    pub eval_every: usize,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    ChainWalk {
        #[serde(default = "chain_states")]
        num_states: usize,
        /// Fixed start state; uniform when absent.
        #[serde(default)]
        start: Option<usize>,
        #[serde(default = "chain_discount")]
        discount: f64,
        #[serde(default = "five")]
        rbf_count: usize,
        #[serde(default = "one")]
        temperature: f64,
    },
    RandomMdp {
        #[serde(default = "random_states")]
        num_states: usize,
        #[serde(default = "random_actions")]
        num_actions: usize,
        /// Seed for ω₁, ω₂; the instance is the same across trials.
        #[serde(default)]
        instance_seed: u64,
        #[serde(default = "random_discount")]
        discount: f64,
        #[serde(default = "five")]
        rbf_count: usize,
        #[serde(default = "five")]
        policy_dim: usize,
        #[serde(default = "random_temperature")]
        temperature: f64,
    },
    SelfDrive {
        #[serde(default)]
        terminal: SelfDriveTerminal,
        #[serde(default = "chain_discount")]
        discount: f64,
        #[serde(default)]
        reward: f64,
        #[serde(default = "self_drive_temperature")]
        temperature: f64,
    },
    Cartpole {
        #[serde(default)]
        params: CartPoleParams,
        #[serde(default)]
        start: Option<Vec<f64>>,
        #[serde(default = "std_dev")]
        scale: ScaleParam,
        #[serde(default = "scale_floor")]
        floor: f64,
    },
    Pendulum {
        #[serde(default)]
        params: LinkPendulumParams,
        #[serde(default)]
        start: Option<Vec<f64>>,
        #[serde(default = "variance")]
        scale: ScaleParam,
        #[serde(default = "scale_floor")]
        floor: f64,
    },
}

fn chain_states() -> usize {
    450
}
fn chain_discount() -> f64 {
    0.99
}
fn five() -> usize {
    5
}
fn one() -> f64 {
    1.0
}
fn random_states() -> usize {
    500
}
fn random_actions() -> usize {
    30
}
fn random_discount() -> f64 {
    0.8
}
fn random_temperature() -> f64 {
    1e3
}
fn self_drive_temperature() -> f64 {
    offpolicy_ce::env::SELF_DRIVE_TEMPERATURE
}
fn std_dev() -> ScaleParam {
    ScaleParam::StdDev
}
fn variance() -> ScaleParam {
    ScaleParam::Variance
}
fn scale_floor() -> f64 {
    1e-6
}

impl EnvSpec {
    pub fn is_tabular(&self) -> bool {
        matches!(
            self,
            EnvSpec::ChainWalk { .. } | EnvSpec::RandomMdp { .. } | EnvSpec::SelfDrive { .. }
        )
    }

    pub fn discount(&self) -> f64 {
        match self {
            EnvSpec::ChainWalk { discount, .. }
            | EnvSpec::SelfDrive { discount, .. }
            | EnvSpec::RandomMdp { discount, .. } => *discount,
            EnvSpec::Cartpole { params, .. } => params.discount,
            EnvSpec::Pendulum { params, .. } => params.discount,
        }
    }
}

/// θ₀ = N(mean, variance · I). The mean defaults to the behaviour vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerformanceSpec {
    Square { scale: f64 },
    Identity,
    Constant { value: f64 },
    SinSquaredState,
    /// scale · h(s₀) for a continuous state s₀.
    AnchorState { scale: f64, state: Vec<f64> },
}

impl PerformanceSpec {
    /// The estimator-level map; anchor features are computed by the caller.
    pub fn to_performance(&self, anchor_features: Option<Vec<f64>>) -> Result<Performance, CliError> {
        Ok(match self {
            PerformanceSpec::Square { scale } => Performance::Square { scale: *scale },
            PerformanceSpec::Identity => Performance::Identity,
            PerformanceSpec::Constant { value } => Performance::Constant { value: *value },
            PerformanceSpec::SinSquaredState => Performance::SinSquaredState,
            PerformanceSpec::AnchorState { scale, .. } => Performance::Anchor {
                scale: *scale,
                features: anchor_features
                    .ok_or_else(|| CliError::Config("anchor_state needs a continuous environment".into()))?,
            },
        })
    }
}

/// LSTD(λ) settings; the discount comes from the environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSpec {
    pub lambda: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub literal_trace_order: bool,
    #[serde(default = "Schedule::harmonic")]
    pub alpha: Schedule,
}

fn default_ridge() -> f64 {
    1.0
}

impl PredictSpec {
    pub fn resolve(&self, discount: f64) -> PredictConfig {
        PredictConfig {
            ridge: self.ridge,
            solver: self.solver,
            literal_trace_order: self.literal_trace_order,
            alpha: self.alpha.clone(),
            ..PredictConfig::new(self.lambda, discount)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    /// Path length; defaults to the largest N_j the search will request.
    #[serde(default)]
    pub length: Option<usize>,
    /// Load this stored path for every trial instead of simulating.
    #[serde(default)]
    pub path: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(p) = &cfg.trajectory.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.trajectory.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    /// Replaces the seed list by `seed, seed+1, …` over the trial count.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = (0..self.trials as u64).map(|i| seed.wrapping_add(i)).collect();
    }

    /// Fills every default so the echoed document reruns the same experiment.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if out.initial_model.mean.is_none() {
            out.initial_model.mean = Some(out.behaviour.clone());
        }
        if out.trajectory.length.is_none() && out.trajectory.path.is_none() {
            out.trajectory.length = Some(out.ce.length.max_over(out.ce.max_iterations));
        }
        out
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seeds.len() != self.trials {
            return bad(format!("{} seeds for {} trials", self.seeds.len(), self.trials));
        }
        if let Some(p) = &self.trajectory.path {
            if !p.exists() {
                return bad(format!("trajectory file {} does not exist", p.display()));
            }
        }
        if !(self.initial_model.variance > 0.0) {
            return bad("initial_model.variance must be positive".into());
        }
        if let Some(m) = &self.initial_model.mean {
            if m.len() != self.behaviour.len() {
                return bad(format!(
                    "initial_model.mean has {} entries, behaviour has {}",
                    m.len(),
                    self.behaviour.len()
                ));
            }
        }
        if matches!(self.performance, PerformanceSpec::SinSquaredState) && !self.environment.is_tabular() {
            return bad("sin_squared_state needs a tabular environment".into());
        }
        if matches!(self.performance, PerformanceSpec::AnchorState { .. }) && self.environment.is_tabular() {
            return bad("anchor_state needs a continuous environment".into());
        }
        if self.normalize_performance && !matches!(self.performance, PerformanceSpec::Square { .. }) {
            return bad("normalize_performance applies to the square performance only".into());
        }
        self.predict.resolve(self.environment.discount()).validate()?;
        self.ce.validate(self.behaviour.len())?;
        Ok(())
    }
}
