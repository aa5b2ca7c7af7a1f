//! Trial orchestration: one path and one search per seed.

use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use offpolicy_ce::ce::{ce_optimize_with, AuditRow, GaussianModel, Objective, PredictObjective, StopReason};
use offpolicy_ce::env::Environment;
use offpolicy_ce::features::FeatureMap;
use offpolicy_ce::lstd::{Performance, PreparedPath};
use offpolicy_ce::policy::PolicyFamily;
use offpolicy_ce::trajectory::{generate_trajectory, Field, TrajectoryStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::problem::{build, Problem, ProblemVisitor};
use crate::CliError;

/// Whether a trial failed on its inputs or in its numerics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    ConfigError,
    NumericalError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub trial: usize,
    pub seed: u64,
    pub status: TrialStatus,
    pub error: Option<String>,
    pub rows: Vec<AuditRow>,
    /// Seconds since the trial started, one per audit row.
    pub elapsed: Vec<f64>,
    /// (j, Ĵ at the reported mean) every `eval_every` iterations.
    pub evaluations: Vec<(usize, f64)>,
    pub w_final: Vec<f64>,
    /// Ĵ at the final parameter on the whole path.
    pub objective_final: Option<f64>,
    /// Ĵ at the behaviour parameter on the whole path.
    pub objective_behaviour: Option<f64>,
    pub stop: Option<StopReason>,
    pub updates: usize,
    /// Performance scale after normalization, when applied.
    pub performance_scale: Option<f64>,
    pub wall_seconds: f64,
}

impl RunRecord {
    fn empty(trial: usize, seed: u64) -> Self {
        Self {
            trial,
            seed,
            status: TrialStatus::Ok,
            error: None,
            rows: Vec::new(),
            elapsed: Vec::new(),
            evaluations: Vec::new(),
            w_final: Vec::new(),
            objective_final: None,
            objective_behaviour: None,
            stop: None,
            updates: 0,
            performance_scale: None,
            wall_seconds: 0.0,
        }
    }
}

/// The search's RNG: the trial seed on its own stream, apart from the path.
pub fn search_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn path_for<E, P>(
    problem: &Problem<E, impl FeatureMap<E::State>, P>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<TrajectoryStore<E::State, E::Action>, CliError>
where
    E: Environment,
    E::State: Field,
    E::Action: Field,
    P: PolicyFamily<E::State, E::Action>,
{
    if let Some(p) = &cfg.trajectory.path {
        return Ok(TrajectoryStore::load(p)?);
    }
    let length = cfg
        .trajectory
        .length
        .unwrap_or_else(|| cfg.ce.length.max_over(cfg.ce.max_iterations));
    let behaviour = problem.family.policy(&cfg.behaviour)?;
    let mut store = generate_trajectory(&problem.env, &behaviour, length, seed)?;
    store.insert_meta("environment", serde_json::to_string(&cfg.environment)?);
    store.insert_meta("behaviour", serde_json::to_string(&cfg.behaviour)?);
    Ok(store)
}

/// Performance with the square scale divided by |Ĵ(w_b)| on this path.
fn normalized<S: Field, A: Field, P: PolicyFamily<S, A>>(
    path: &PreparedPath<'_, S, A>,
    family: &P,
    cfg: &ExperimentConfig,
    perf: &Performance,
) -> Result<Performance, CliError> {
    let Performance::Square { scale } = perf else {
        return Ok(perf.clone());
    };
    let behaviour = family.policy(&cfg.behaviour)?;
    let unit = Performance::Square { scale: 1.0 };
    let pc = cfg.predict.resolve(cfg.environment.discount());
    let jb = path.predict(&behaviour, path.len(), &pc, &unit)?.objective;
    if !(jb.abs() > 0.0) || !jb.is_finite() {
        return Err(CliError::Numerical(format!(
            "cannot normalize by the behaviour objective {jb}"
        )));
    }
    Ok(Performance::Square { scale: scale / jb.abs() })
}

fn trial<E, F, P>(
    problem: &Problem<E, F, P>,
    cfg: &ExperimentConfig,
    index: usize,
    rec: &mut RunRecord,
) -> Result<(), CliError>
where
    E: Environment,
    E::State: Field,
    E::Action: Field,
    F: FeatureMap<E::State>,
    P: PolicyFamily<E::State, E::Action> + Clone,
{
    let seed = cfg.seeds[index];
    let started = Instant::now();
    let store = path_for(problem, cfg, seed)?;
    let behaviour = problem.family.policy(&cfg.behaviour)?;
    let records = store.records();
    let mut perf = problem.performance.clone();
    if cfg.normalize_performance {
        let path = PreparedPath::new(records, &problem.features, &behaviour);
        perf = normalized(&path, &problem.family, cfg, &perf)?;
        if let Performance::Square { scale } = perf {
            rec.performance_scale = Some(scale);
        }
    }
    let predict = cfg.predict.resolve(problem.env.discount());
    let mut objective = PredictObjective::new(
        records,
        &problem.features,
        &behaviour,
        problem.family.clone(),
        predict,
        perf,
    )?;
    let mean = cfg.initial_model.mean.clone().unwrap_or_else(|| cfg.behaviour.clone());
    let theta0 = GaussianModel::isotropic(&mean, cfg.initial_model.variance);
    let mut rng = search_rng(seed);
    let full = records.len();
    let every = cfg.eval_every;
    let outcome = ce_optimize_with(&mut objective, &theta0, &cfg.ce, &mut rng, |state, row, obj| {
        rec.rows.push(row.clone());
        rec.elapsed.push(started.elapsed().as_secs_f64());
        rec.updates = state.updates;
        if every > 0 && (row.j + 1) % every == 0 {
            let y = obj.evaluate(state.final_mean(&cfg.ce).as_slice(), full)?;
            rec.evaluations.push((row.j, y));
        }
        Ok(())
    })?;
    rec.stop = Some(outcome.stop);
    rec.updates = outcome.state.updates;
    rec.objective_final = Some(objective.evaluate(&outcome.w_final, full)?);
    rec.objective_behaviour = Some(objective.evaluate(&cfg.behaviour, full)?);
    rec.w_final = outcome.w_final;
    Ok(())
}

struct RunAll<'a> {
    cfg: &'a ExperimentConfig,
    workers: usize,
}

impl ProblemVisitor for RunAll<'_> {
    type Output = Vec<RunRecord>;

    fn visit<E, F, P>(self, problem: Problem<E, F, P>) -> Result<Vec<RunRecord>, CliError>
    where
        E: Environment + Sync,
        E::State: Field + Send + Sync,
        E::Action: Field + Send + Sync,
        F: FeatureMap<E::State> + Sync,
        P: PolicyFamily<E::State, E::Action> + Clone + Sync,
    {
        let cfg = self.cfg;
        let run_one = |i: usize| {
            let mut rec = RunRecord::empty(i, cfg.seeds[i]);
            let t0 = Instant::now();
            if let Err(e) = trial(&problem, cfg, i, &mut rec) {
                warn!("trial {i} (seed {}) failed: {e}", cfg.seeds[i]);
                rec.status = match e {
                    CliError::Numerical(_) => TrialStatus::NumericalError,
                    _ => TrialStatus::ConfigError,
                };
                rec.error = Some(e.to_string());
            }
            rec.wall_seconds = t0.elapsed().as_secs_f64();
            info!(
                "trial {i} seed {} finished: {:?}, {} iterations, {:.1}s",
                rec.seed,
                rec.status,
                rec.rows.len(),
                rec.wall_seconds
            );
            rec
        };
        let n = cfg.trials;
        let workers = self.workers.clamp(1, n.max(1));
        let mut out: Vec<RunRecord> = if workers == 1 {
            (0..n).map(run_one).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let run_one = &run_one;
                        scope.spawn(move || (w..n).step_by(workers).map(run_one).collect::<Vec<_>>())
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("trial worker panicked"))
                    .collect()
            })
        };
        out.sort_by_key(|r| r.trial);
        Ok(out)
    }
}

/// Runs every trial of a validated config. The config is resolved first; a
/// failing trial is recorded and the others proceed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, CliError> {
    run_experiment_with_workers(cfg, default_workers())
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run_experiment_with_workers(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<RunRecord>, CliError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    build(&cfg.environment, &cfg.performance, RunAll { cfg: &cfg, workers })
}

struct GenTraj<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    path: &'a Path,
}

impl ProblemVisitor for GenTraj<'_> {
    type Output = usize;

    fn visit<E, F, P>(self, problem: Problem<E, F, P>) -> Result<usize, CliError>
    where
        E: Environment + Sync,
        E::State: Field + Send + Sync,
        E::Action: Field + Send + Sync,
        F: FeatureMap<E::State> + Sync,
        P: PolicyFamily<E::State, E::Action> + Clone + Sync,
    {
        let mut cfg = self.cfg.clone();
        cfg.trajectory.path = None;
        let store = path_for(&problem, &cfg, self.seed)?;
        store.save(self.path)?;
        Ok(store.len())
    }
}

/// Simulates one behaviour path and stores it; returns its length.
pub fn generate_path(cfg: &ExperimentConfig, seed: u64, path: &Path) -> Result<usize, CliError> {
    let cfg = cfg.resolved();
    build(&cfg.environment, &cfg.performance, GenTraj { cfg: &cfg, seed, path })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub seed: u64,
    pub weights: Vec<f64>,
    pub transitions: usize,
    pub objective: f64,
    pub solution: Vec<f64>,
}

struct PredictTask<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    weights: &'a [f64],
}

impl ProblemVisitor for PredictTask<'_> {
    type Output = PredictSummary;

    fn visit<E, F, P>(self, problem: Problem<E, F, P>) -> Result<PredictSummary, CliError>
    where
        E: Environment + Sync,
        E::State: Field + Send + Sync,
        E::Action: Field + Send + Sync,
        F: FeatureMap<E::State> + Sync,
        P: PolicyFamily<E::State, E::Action> + Clone + Sync,
    {
        let cfg = self.cfg;
        let store = path_for(&problem, cfg, self.seed)?;
        let behaviour = problem.family.policy(&cfg.behaviour)?;
        let target = problem.family.policy(self.weights)?;
        let path = PreparedPath::new(store.records(), &problem.features, &behaviour);
        let perf = if cfg.normalize_performance {
            normalized(&path, &problem.family, cfg, &problem.performance)?
        } else {
            problem.performance.clone()
        };
        let predict = cfg.predict.resolve(problem.env.discount());
        let out = path.predict(&target, path.len(), &predict, &perf)?;
        Ok(PredictSummary {
            seed: self.seed,
            weights: self.weights.to_vec(),
            transitions: path.len(),
            objective: out.objective,
            solution: out.solution.as_slice().to_vec(),
        })
    }
}

/// Ĵ(w) by off-policy LSTD(λ) on the behaviour path of `seed`.
pub fn predict_at(cfg: &ExperimentConfig, seed: u64, weights: &[f64]) -> Result<PredictSummary, CliError> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    if weights.len() != cfg.behaviour.len() {
        return Err(CliError::Config(format!(
            "weights have {} entries, expected {}",
            weights.len(),
            cfg.behaviour.len()
        )));
    }
    build(&cfg.environment, &cfg.performance, PredictTask { cfg: &cfg, seed, weights })
}
