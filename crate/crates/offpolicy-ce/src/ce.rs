//! Stochastic-approximation cross-entropy search over policy parameters.
//!
//! The sampling model is a Gaussian θ = (μ, Σ). Each iteration draws one
//! candidate from the mixture (1−ζ)f_θ + ζf_θ₀, estimates its objective,
//! and advances the quantile tracker γ and the moment trackers ξ⁽⁰⁾, ξ⁽¹⁾.
//! The model itself moves only when the comparison statistic T crosses ε.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::lstd::{Performance, PredictConfig, PreparedPath};
use crate::policy::PolicyFamily;
use crate::schedule::Schedule;
use crate::trajectory::Field;

/// Largest |r·y| passed to `exp`.
pub const SHAPE_CLAMP: f64 = 700.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianModel {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let k = mean.len();
        if cov.nrows() != k || cov.ncols() != k {
            return Err(Error::Dimension {
                what: "covariance",
                expected: k,
                got: cov.nrows(),
            });
        }
        Ok(Self { mean, cov })
    }

    /// N(μ, σ²I).
    pub fn isotropic(mean: &[f64], variance: f64) -> Self {
        let k = mean.len();
        Self {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::identity(k, k) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    /// One draw via the Cholesky factor of Σ.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.cov.clone().cholesky().ok_or_else(|| Error::Singular {
            context: "Gaussian sampling",
            detail: "covariance is not positive definite".into(),
        })?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.mean + chol.l() * z)
    }

    /// Clamps μ into the box and floors the spectrum of the symmetrized Σ at σ_floor².
    pub fn project(&mut self, bounds: Option<&BoxBounds>, sigma_floor: f64) -> Result<()> {
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!(
                "model before projection: mean {:?}",
                self.mean.as_slice()
            )));
        }
        if let Some(b) = bounds {
            b.clamp(self.mean.as_mut_slice());
        }
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let mut eig = SymmetricEigen::new(sym);
        let floor = sigma_floor * sigma_floor;
        eig.eigenvalues.iter_mut().for_each(|l| *l = l.max(floor));
        let cov = eig.recompose();
        self.cov = (&cov + cov.transpose()) * 0.5;
        Ok(())
    }

    /// Euclidean distance between (μ, vec Σ) pairs.
    pub fn distance(&self, other: &Self) -> f64 {
        ((&self.mean - &other.mean).norm_squared() + (&self.cov - &other.cov).norm_squared()).sqrt()
    }

    fn blend(&mut self, mean: &DVector<f64>, cov: &DMatrix<f64>, weight: f64) {
        self.mean += (mean - &self.mean) * weight;
        self.cov += (cov - &self.cov) * weight;
    }
}

/// Per-coordinate box 𝕎. A single-entry bound applies to every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn symmetric(half_width: f64) -> Self {
        Self {
            lower: vec![-half_width],
            upper: vec![half_width],
        }
    }

    fn bound(v: &[f64], i: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[i]
        }
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = xi.clamp(Self::bound(&self.lower, i), Self::bound(&self.upper, i));
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        for v in [&self.lower, &self.upper] {
            if v.len() != 1 && v.len() != k {
                return Err(Error::Dimension {
                    what: "box bounds",
                    expected: k,
                    got: v.len(),
                });
            }
        }
        for i in 0..k {
            if !(Self::bound(&self.lower, i) <= Self::bound(&self.upper, i)) {
                return Err(Error::config(format!("box bound {i} is empty")));
            }
        }
        Ok(())
    }
}

/// Polyak weight β̄.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AveragingSchedule {
    /// No averaging; the reported model is the current one.
    Off,
    /// 1/j at the iteration j of the update.
    InverseUpdateIndex,
    /// A schedule over the count n of model updates so far.
    PerUpdate { schedule: Schedule },
}

impl AveragingSchedule {
    fn weight(&self, iteration: usize, updates: usize) -> Option<f64> {
        match self {
            AveragingSchedule::Off => None,
            AveragingSchedule::InverseUpdateIndex => Some(1.0 / iteration.max(1) as f64),
            AveragingSchedule::PerUpdate { schedule } => Some(schedule.at(updates)),
        }
    }
}

/// Mixing weight ζ on the initial model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MixingSchedule {
    Constant { value: f64 },
    /// 1/j at the iteration of the latest model update, floored.
    InverseUpdateIndex {
        #[serde(default = "default_zeta_floor")]
        floor: f64,
    },
}

fn default_zeta_floor() -> f64 {
    1e-3
}

impl MixingSchedule {
    pub fn at(&self, last_update: usize) -> f64 {
        match *self {
            MixingSchedule::Constant { value } => value,
            MixingSchedule::InverseUpdateIndex { floor } => (1.0 / last_update.max(1) as f64).max(floor),
        }
    }
}

/// Trajectory length N_j.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthRule {
    Constant { n: usize },
    /// N₀·⌈ln(j+2)⌉.
    LogGrowth { base: usize },
}

impl LengthRule {
    pub fn at(&self, j: usize) -> usize {
        match *self {
            LengthRule::Constant { n } => n,
            LengthRule::LogGrowth { base } => base * ((j as f64 + 2.0).ln().ceil() as usize),
        }
    }

    /// Largest N_j over the first `iterations` iterations.
    pub fn max_over(&self, iterations: usize) -> usize {
        self.at(iterations.saturating_sub(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub beta: Schedule,
    pub beta_bar: AveragingSchedule,
    pub zeta: MixingSchedule,
    pub c: Schedule,
    pub r: f64,
    pub length: LengthRule,
    #[serde(default)]
    pub bounds: Option<BoxBounds>,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    #[serde(default = "default_delta1")]
    pub delta1: f64,
    #[serde(default = "default_stop_window")]
    pub stop_window: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Compare against the running γᵖ tracker instead of the γ saved at the
    /// last model update.
    #[serde(default = "default_true")]
    pub tracked_previous_threshold: bool,
}

fn default_sigma_floor() -> f64 {
    1e-3
}
fn default_delta1() -> f64 {
    1e-4
}
fn default_stop_window() -> usize {
    2000
}
fn default_true() -> bool {
    true
}
fn default_max_iterations() -> usize {
    50_000
}

impl CeConfig {
    /// Constant-step settings in the style of the continuous-control tables.
    pub fn table_defaults(n: usize) -> Self {
        Self {
            rho: 0.01,
            epsilon: 0.9,
            beta: Schedule::constant(0.7),
            beta_bar: AveragingSchedule::InverseUpdateIndex,
            zeta: MixingSchedule::InverseUpdateIndex {
                floor: default_zeta_floor(),
            },
            c: Schedule::constant(0.1),
            r: 0.01,
            length: LengthRule::Constant { n },
            bounds: None,
            sigma_floor: default_sigma_floor(),
            delta1: default_delta1(),
            stop_window: default_stop_window(),
            max_iterations: default_max_iterations(),
            tracked_previous_threshold: true,
        }
    }

    pub fn validate(&self, k2: usize) -> Result<()> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::config(format!("{name} = {v} must lie in (0,1)")))
            }
        };
        open("rho", self.rho)?;
        open("epsilon", self.epsilon)?;
        self.beta.validate("beta", 0.0, 1.0)?;
        self.c.validate("c", 0.0, 1.0)?;
        if let AveragingSchedule::PerUpdate { schedule } = &self.beta_bar {
            schedule.validate("beta_bar", 0.0, 1.0)?;
        }
        match self.zeta {
            MixingSchedule::Constant { value } if (0.0..=1.0).contains(&value) => {}
            MixingSchedule::InverseUpdateIndex { floor } if (0.0..=1.0).contains(&floor) => {}
            _ => return Err(Error::config("zeta must lie in [0,1]")),
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::config(format!("shape gain r = {} must be positive", self.r)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::config("sigma_floor must be positive"));
        }
        if self.length.at(0) == 0 {
            return Err(Error::config("trajectory length N_j must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be positive"));
        }
        if let Some(b) = &self.bounds {
            b.validate(k2)?;
        }
        Ok(())
    }
}

/// Draws from f_θ with probability 1−ζ and from f_θ₀ otherwise.
pub fn sample_mixture<R: Rng + ?Sized>(
    theta: &GaussianModel,
    theta0: &GaussianModel,
    zeta: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let u: f64 = rng.random();
    if u < zeta {
        theta0.sample(rng)
    } else {
        theta.sample(rng)
    }
}

/// φ(y) = exp(r·y), with r·y clamped to ±700.
pub fn shape(y: f64, r: f64) -> f64 {
    let z = r * y;
    if z.abs() > SHAPE_CLAMP {
        log::warn!("shape argument r*y = {z:e} clamped to ±{SHAPE_CLAMP}");
    }
    z.clamp(-SHAPE_CLAMP, SHAPE_CLAMP).exp()
}

/// γ′ = γ − β(−(1−ρ)I{y≥γ} + ρI{y≤γ}). Both indicators fire on a tie.
pub fn update_quantile(gamma: f64, y: f64, beta: f64, rho: f64) -> f64 {
    let mut delta = 0.0;
    if y >= gamma {
        delta -= 1.0 - rho;
    }
    if y <= gamma {
        delta += rho;
    }
    gamma - beta * delta
}

/// One step of the ξ⁽⁰⁾, ξ⁽¹⁾ recursions. `gamma` is the tracker value
/// before this iteration's quantile update, and g₂ is centred at the
/// incoming ξ⁽⁰⁾. The gain β·φ(y) is capped at 1, so a huge φ(y) moves
/// ξ⁽⁰⁾ onto `w` instead of past it.
pub fn update_xi(
    xi0: &mut DVector<f64>,
    xi1: &mut DMatrix<f64>,
    w: &DVector<f64>,
    y: f64,
    gamma: f64,
    beta: f64,
    r: f64,
) {
    if y < gamma {
        return;
    }
    let gain = (beta * shape(y, r)).min(1.0);
    let d = w - &*xi0;
    // ξ⁽¹⁾ first, so g₂ sees the old ξ⁽⁰⁾.
    *xi1 *= 1.0 - gain;
    xi1.ger(gain, &d, &d, 1.0);
    *xi0 *= 1.0 - gain;
    xi0.axpy(gain, w, 1.0);
}

/// T′ = T + c(I{γ>γᵖ} − I{γ≤γᵖ} − T), kept strictly inside (−1, 1).
pub fn update_threshold(t: f64, gamma: f64, gamma_prev: f64, c: f64) -> f64 {
    let sign = if gamma > gamma_prev { 1.0 } else { -1.0 };
    let next = t + c * (sign - t);
    // (1−c)T ± c is inside (−1,1) exactly; rounding may land on ±1.
    let edge = 1.0 - f64::EPSILON;
    next.clamp(-edge, edge)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeState {
    pub theta: GaussianModel,
    pub theta_bar: GaussianModel,
    pub theta_prev: Option<GaussianModel>,
    pub gamma: f64,
    /// Threshold saved at the latest model update (−∞ before the first).
    pub gamma_prev: f64,
    /// Quantile tracker run on samples from θᵖ.
    pub gamma_prev_tracker: f64,
    pub xi0: DVector<f64>,
    pub xi1: DMatrix<f64>,
    pub t: f64,
    pub c: f64,
    /// Iterations completed.
    pub j: usize,
    pub updates: usize,
    /// 1-based iteration of the latest model update, 0 before any.
    pub last_update: usize,
}

impl CeState {
    pub fn new(theta0: &GaussianModel, cfg: &CeConfig) -> Self {
        let k = theta0.dim();
        Self {
            theta: theta0.clone(),
            theta_bar: theta0.clone(),
            theta_prev: None,
            gamma: 0.0,
            gamma_prev: f64::NEG_INFINITY,
            gamma_prev_tracker: f64::NEG_INFINITY,
            xi0: DVector::zeros(k),
            xi1: DMatrix::zeros(k, k),
            t: 0.0,
            c: cfg.c.at(1),
            j: 0,
            updates: 0,
            last_update: 0,
        }
    }

    /// The parameter the run reports: μ̄ under averaging, μ otherwise.
    pub fn final_mean(&self, cfg: &CeConfig) -> &DVector<f64> {
        match cfg.beta_bar {
            AveragingSchedule::Off => &self.theta.mean,
            _ => &self.theta_bar.mean,
        }
    }

    fn comparison_threshold(&self, cfg: &CeConfig) -> f64 {
        if cfg.tracked_previous_threshold {
            self.gamma_prev_tracker
        } else {
            self.gamma_prev
        }
    }
}

/// Applies the update branch: save θ and γ, blend θ toward (ξ⁽⁰⁾, ξ⁽¹⁾),
/// project, reset T and c, and advance the Polyak average.
///
/// `xi` are the tracker values from before this iteration's ξ update.
pub fn model_update(
    state: &mut CeState,
    xi: (&DVector<f64>, &DMatrix<f64>),
    gamma: f64,
    beta: f64,
    cfg: &CeConfig,
) -> Result<()> {
    let iteration = state.j + 1;
    state.theta_prev = Some(state.theta.clone());
    state.gamma_prev = gamma;
    state.gamma_prev_tracker = gamma;
    state.theta.blend(xi.0, xi.1, beta);
    state.theta.project(cfg.bounds.as_ref(), cfg.sigma_floor)?;
    state.t = 0.0;
    state.c = cfg.c.at(iteration);
    state.updates += 1;
    state.last_update = iteration;
    if let Some(w) = cfg.beta_bar.weight(iteration, state.updates) {
        let target = state.theta.clone();
        state.theta_bar.blend(&target.mean, &target.cov, w);
    }
    Ok(())
}

/// A black-box estimate of J at a parameter, given a sample budget.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&mut self, w: &[f64], n: usize) -> Result<f64>;
    /// Largest budget `evaluate` accepts, if bounded.
    fn capacity(&self) -> Option<usize> {
        None
    }
}

/// Wraps a deterministic or self-seeded closure; the budget is ignored.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64]) -> f64> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64]) -> f64> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&mut self, w: &[f64], _n: usize) -> Result<f64> {
        Ok((self.f)(w))
    }
}

/// ℓ_N from off-policy LSTD(λ) on the stored behaviour path.
pub struct PredictObjective<'a, S, A, P> {
    pub path: PreparedPath<'a, S, A>,
    pub family: P,
    pub predict: PredictConfig,
    pub performance: Performance,
}

impl<'a, S: Field, A: Field, P: PolicyFamily<S, A>> PredictObjective<'a, S, A, P> {
    pub fn new<F, B>(
        records: &'a [crate::trajectory::Transition<S, A>],
        features: &F,
        behaviour: &B,
        family: P,
        predict: PredictConfig,
        performance: Performance,
    ) -> Result<Self>
    where
        F: FeatureMap<S>,
        B: crate::policy::Policy<S, A>,
    {
        predict.validate()?;
        let path = PreparedPath::new(records, features, behaviour);
        performance.check_dim(path.feature_dim())?;
        Ok(Self {
            path,
            family,
            predict,
            performance,
        })
    }
}

impl<S: Field, A: Field, P: PolicyFamily<S, A>> Objective for PredictObjective<'_, S, A, P> {
    fn dim(&self) -> usize {
        self.family.dim()
    }

    fn evaluate(&mut self, w: &[f64], n: usize) -> Result<f64> {
        let policy = self.family.policy(w)?;
        Ok(self.path.predict(&policy, n, &self.predict, &self.performance)?.objective)
    }

    fn capacity(&self) -> Option<usize> {
        Some(self.path.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub j: usize,
    pub objective: f64,
    pub gamma: f64,
    pub gamma_prev: f64,
    pub threshold: f64,
    pub updated: bool,
    pub mean: Vec<f64>,
    pub trace: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    IterationCap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CeOutcome {
    pub state: CeState,
    pub w_final: Vec<f64>,
    pub audit: Vec<AuditRow>,
    pub stop: StopReason,
}

fn evaluate_checked<O: Objective + ?Sized>(objective: &mut O, w: &DVector<f64>, n: usize) -> Result<f64> {
    let y = objective.evaluate(w.as_slice(), n)?;
    if !y.is_finite() {
        return Err(Error::non_finite(format!("objective estimate {y} at w = {:?}", w.as_slice())));
    }
    Ok(y)
}

/// One pass of the loop body. Returns the audit row for this iteration.
pub fn ce_step<O, R>(
    state: &mut CeState,
    theta0: &GaussianModel,
    objective: &mut O,
    cfg: &CeConfig,
    rng: &mut R,
) -> Result<AuditRow>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    let j1 = state.j + 1;
    let beta = cfg.beta.at(j1);
    let zeta = cfg.zeta.at(state.last_update);
    let n = cfg.length.at(j1);

    let w = sample_mixture(&state.theta, theta0, zeta, rng)?;
    let y = evaluate_checked(objective, &w, n)?;

    let gamma_j = state.gamma;
    let compare_j = state.comparison_threshold(cfg);
    let xi_j = (state.xi0.clone(), state.xi1.clone());

    state.gamma = update_quantile(gamma_j, y, beta, cfg.rho);
    update_xi(&mut state.xi0, &mut state.xi1, &w, y, gamma_j, beta, cfg.r);

    if let Some(prev) = &state.theta_prev {
        let wp = sample_mixture(prev, theta0, zeta, rng)?;
        let yp = evaluate_checked(objective, &wp, n)?;
        state.gamma_prev_tracker = update_quantile(state.gamma_prev_tracker, yp, beta, cfg.rho);
    }

    state.t = update_threshold(state.t, gamma_j, compare_j, state.c);
    assert!(state.t > -1.0 && state.t < 1.0, "T left (-1,1): {}", state.t);
    let t_next = state.t;

    let updated = t_next > cfg.epsilon;
    if updated {
        model_update(state, (&xi_j.0, &xi_j.1), gamma_j, beta, cfg)?;
    }

    let row = AuditRow {
        j: state.j,
        objective: y,
        gamma: state.gamma,
        gamma_prev: state.comparison_threshold(cfg),
        threshold: t_next,
        updated,
        mean: state.theta.mean.as_slice().to_vec(),
        trace: state.theta.trace(),
    };
    state.j = j1;
    Ok(row)
}

/// Runs the loop until θ moves less than δ₁ for `stop_window` consecutive
/// iterations or the iteration cap is reached.
pub fn ce_optimize<O, R>(
    objective: &mut O,
    theta0: &GaussianModel,
    cfg: &CeConfig,
    rng: &mut R,
) -> Result<CeOutcome>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
{
    ce_optimize_with(objective, theta0, cfg, rng, |_, _, _| Ok(()))
}

/// [`ce_optimize`] with a callback after every iteration. The callback sees
/// the state, the fresh audit row and the objective; an error aborts the run.
pub fn ce_optimize_with<O, R, C>(
    objective: &mut O,
    theta0: &GaussianModel,
    cfg: &CeConfig,
    rng: &mut R,
    mut on_row: C,
) -> Result<CeOutcome>
where
    O: Objective + ?Sized,
    R: Rng + ?Sized,
    C: FnMut(&CeState, &AuditRow, &mut O) -> Result<()>,
{
    let k = objective.dim();
    if theta0.dim() != k {
        return Err(Error::Dimension {
            what: "initial model",
            expected: k,
            got: theta0.dim(),
        });
    }
    cfg.validate(k)?;
    if let Some(cap) = objective.capacity() {
        let need = cfg.length.max_over(cfg.max_iterations);
        if need > cap {
            return Err(Error::InsufficientData {
                available: cap,
                requested: need,
            });
        }
    }
    let mut theta0 = theta0.clone();
    theta0.project(cfg.bounds.as_ref(), cfg.sigma_floor)?;
    let mut state = CeState::new(&theta0, cfg);
    let mut audit = Vec::new();
    let mut still = 0usize;
    let mut stop = StopReason::IterationCap;
    while state.j < cfg.max_iterations {
        let before = state.theta.clone();
        let row = ce_step(&mut state, &theta0, objective, cfg, rng)?;
        on_row(&state, &row, objective)?;
        audit.push(row);
        if state.theta.distance(&before) < cfg.delta1 {
            still += 1;
            if still >= cfg.stop_window {
                stop = StopReason::Converged;
                break;
            }
        } else {
            still = 0;
        }
    }
    let w_final = state.final_mean(cfg).as_slice().to_vec();
    Ok(CeOutcome {
        state,
        w_final,
        audit,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantile_moves() {
        assert_relative_eq!(update_quantile(1.0, 2.0, 0.5, 0.1), 1.45);
        assert_relative_eq!(update_quantile(1.0, 0.0, 0.5, 0.1), 0.95);
        assert_relative_eq!(update_quantile(1.0, 1.0, 0.5, 0.1), 1.0 + 0.5 * 0.8);
    }

    #[test]
    fn shape_values() {
        assert_eq!(shape(0.0, 0.3), 1.0);
        assert_relative_eq!(shape(100.0, 0.01), std::f64::consts::E, epsilon = 1e-12);
        assert!(shape(1e6, 1.0).is_finite());
    }

    #[test]
    fn xi_fixed_point() {
        let mu = DVector::from_vec(vec![0.3, -1.0]);
        let mut xi0 = DVector::zeros(2);
        let mut xi1 = DMatrix::zeros(2, 2);
        for _ in 0..200 {
            update_xi(&mut xi0, &mut xi1, &mu, 1.0, 0.0, 0.3, 0.1);
        }
        assert_relative_eq!(xi0, mu, epsilon = 1e-10);
        assert!(xi1.norm() < 1e-10);
        let before = xi0.clone();
        update_xi(&mut xi0, &mut xi1, &DVector::zeros(2), -1.0, 0.0, 0.3, 0.1);
        assert_eq!(xi0, before);
    }

    #[test]
    fn xi_gain_is_capped() {
        let w = DVector::from_vec(vec![2.0, -3.0]);
        let mut xi0 = DVector::from_vec(vec![1.0, 1.0]);
        let mut xi1 = DMatrix::identity(2, 2);
        update_xi(&mut xi0, &mut xi1, &w, 1e6, 0.0, 0.5, 1.0);
        assert_eq!(xi0, w);
        assert!(xi1.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn threshold_closed_form() {
        let mut t = 0.0;
        for j in 1..=30 {
            t = update_threshold(t, 1.0, 0.0, 0.1);
            assert_relative_eq!(t, 1.0 - 0.9f64.powi(j), epsilon = 1e-12);
        }
        for _ in 0..10_000 {
            t = update_threshold(t, 0.0, 1.0, 0.1);
            assert!(t > -1.0);
        }
    }

    #[test]
    fn projection_floors_spectrum() {
        let mut m = GaussianModel::new(
            DVector::from_vec(vec![5.0, -5.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        )
        .unwrap();
        m.project(Some(&BoxBounds::symmetric(1.0)), 0.1).unwrap();
        assert_eq!(m.mean.as_slice(), &[1.0, -1.0]);
        assert!(m.cov.clone().cholesky().is_some());
        let eig = SymmetricEigen::new(m.cov.clone());
        assert!(eig.eigenvalues.min() >= 0.01 - 1e-12);
    }

    #[test]
    fn update_resets_and_saves() {
        let cfg = CeConfig::table_defaults(10);
        let theta0 = GaussianModel::isotropic(&[0.0], 1.0);
        let mut st = CeState::new(&theta0, &cfg);
        st.t = 0.95;
        let xi0 = DVector::from_vec(vec![2.0]);
        let xi1 = DMatrix::from_element(1, 1, 0.5);
        model_update(&mut st, (&xi0, &xi1), 3.0, 1.0, &cfg).unwrap();
        assert_eq!(st.t, 0.0);
        assert_eq!(st.gamma_prev, 3.0);
        assert_eq!(st.theta.mean[0], 2.0);
        assert_eq!(st.theta.cov[(0, 0)], 0.5);
        assert_eq!(st.theta_prev.as_ref().unwrap(), &theta0);
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = CeConfig {
            max_iterations: 300,
            ..CeConfig::table_defaults(1)
        };
        let theta0 = GaussianModel::isotropic(&[0.0, 0.0], 4.0);
        let run = |seed| {
            let mut f = FnObjective::new(2, |w: &[f64]| -(w[0] - 1.0).powi(2) - w[1].powi(2));
            ce_optimize(&mut f, &theta0, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        assert_eq!(run(3), run(3));
    }
}
