//! Off-policy LSTD(λ) over a replayed path, the running objective estimate ℓ,
//! and off-policy TD(λ) as an alternative predictor.
//!
//! The ridge `δI` is carried as one pseudo-sample: after k transitions
//! `A_k = (δI + Σ_{i<k} e_i d_iᵀ)/(k+1)` and `b_k = Σ_{i<k} ρ_i r_i e_i/(k+1)`,
//! so `A_k` stays invertible from the first step and the ridge fades as 1/k.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::policy::{ratio_from_logs, Policy};
use crate::schedule::Schedule;
use crate::trajectory::{Field, Transition};

/// How `x_k = A_k⁻¹ b_k` is refreshed after each transition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// LU factorization every step.
    #[default]
    Dense,
    /// Rank-one update of A⁻¹, refactorized every `SM_REFRESH` steps.
    ShermanMorrison,
}

const SM_REFRESH: usize = 1024;

fn default_ridge() -> f64 {
    1e-3
}

fn default_alpha() -> Schedule {
    Schedule::harmonic()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub lambda: f64,
    pub discount: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Use the trace from before φ(s_k) is added in the step-k A, b updates.
    #[serde(default)]
    pub literal_trace_order: bool,
    #[serde(default)]
    pub solver: Solver,
    /// ℓ step sizes α_k, indexed from 1.
    #[serde(default = "default_alpha")]
    pub alpha: Schedule,
}

impl PredictConfig {
    pub fn new(lambda: f64, discount: f64) -> Self {
        Self {
            lambda,
            discount,
            ridge: default_ridge(),
            literal_trace_order: false,
            solver: Solver::Dense,
            alpha: default_alpha(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("lambda must lie in [0, 1]"));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::config("discount must lie in (0, 1)"));
        }
        if !(self.discount * self.lambda < 1.0) {
            return Err(Error::config("discount * lambda must be below 1"));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::config("ridge must be positive"));
        }
        self.alpha.validate("alpha", 0.0, 1.0)
    }
}

/// The map L applied to predicted values inside the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Performance {
    /// scale · y²
    Square { scale: f64 },
    /// y
    Identity,
    /// A constant, whatever the input.
    Constant { value: f64 },
    /// sin²(π s / 2) of the tabular state index; ignores y.
    SinSquaredState,
    /// scale · xᵀφ(s₀) for a fixed anchor state s₀ given through its features.
    Anchor { scale: f64, features: Vec<f64> },
}

impl Performance {
    /// L at a state with tabular label `label`, predicted value `y`, solution `x`.
    pub fn eval(&self, label: Option<usize>, y: f64, x: &[f64]) -> f64 {
        match self {
            Performance::Square { scale } => scale * y * y,
            Performance::Identity => y,
            Performance::Constant { value } => *value,
            Performance::SinSquaredState => {
                let s = label.expect("sin² performance needs tabular states") as f64;
                let v = (0.5 * std::f64::consts::PI * s).sin();
                v * v
            }
            Performance::Anchor { scale, features } => {
                scale * features.iter().zip(x).map(|(f, x)| f * x).sum::<f64>()
            }
        }
    }

    pub fn needs_label(&self) -> bool {
        matches!(self, Performance::SinSquaredState)
    }

    pub fn check_dim(&self, k1: usize) -> Result<()> {
        if let Performance::Anchor { features, .. } = self {
            if features.len() != k1 {
                return Err(Error::Dimension {
                    what: "anchor features",
                    expected: k1,
                    got: features.len(),
                });
            }
        }
        Ok(())
    }
}

/// Running state of one Predict call.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictState {
    e: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    x: DVector<f64>,
    ell: f64,
    k: usize,
    rho_prev: f64,
    a_inv: Option<DMatrix<f64>>,
}

pub fn predict_init(k1: usize, ridge: f64) -> PredictState {
    PredictState {
        e: DVector::zeros(k1),
        a: DMatrix::identity(k1, k1) * ridge,
        b: DVector::zeros(k1),
        x: DVector::zeros(k1),
        ell: 0.0,
        k: 0,
        rho_prev: 0.0,
        a_inv: None,
    }
}

fn singular(a: &DMatrix<f64>) -> Error {
    let sv = a.clone().singular_values();
    let (mx, mn) = (sv.max(), sv.min());
    Error::Singular {
        context: "LSTD solve",
        detail: format!("condition number {:e}", mx / mn),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl PredictState {
    pub fn trace(&self) -> &DVector<f64> {
        &self.e
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn solution(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn objective(&self) -> f64 {
        self.ell
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    /// One transition (s, a, r, s′) given φ(s), φ(s′), ρ and the label of s′.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        phi_s: &[f64],
        phi_next: &[f64],
        rho: f64,
        reward: f64,
        next_label: Option<usize>,
        cfg: &PredictConfig,
        perf: &Performance,
    ) -> Result<()> {
        let gamma = cfg.discount;
        let y = dot(self.x.as_slice(), phi_next);
        let l = perf.eval(next_label, y, self.x.as_slice());
        self.ell += cfg.alpha.at(self.k + 1) * (l - self.ell);

        if !cfg.literal_trace_order {
            self.e *= gamma * cfg.lambda * self.rho_prev;
            self.e += DVector::from_column_slice(phi_s);
        }
        let d = DVector::from_iterator(
            phi_s.len(),
            phi_s.iter().zip(phi_next).map(|(p, q)| p - gamma * rho * q),
        );
        let eta = 1.0 / (self.k as f64 + 2.0);
        self.a *= 1.0 - eta;
        self.a.ger(eta, &self.e, &d, 1.0);
        self.b *= 1.0 - eta;
        self.b.axpy(eta * rho * reward, &self.e, 1.0);
        match cfg.solver {
            Solver::Dense => self.solve_dense()?,
            Solver::ShermanMorrison => self.solve_rank_one(eta, &d)?,
        }
        if cfg.literal_trace_order {
            self.e *= gamma * cfg.lambda * rho;
            self.e += DVector::from_column_slice(phi_s);
        }
        self.rho_prev = rho;
        self.k += 1;
        if !self.ell.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("LSTD iterate at step {}", self.k)));
        }
        Ok(())
    }

    fn solve_dense(&mut self) -> Result<()> {
        let lu = self.a.clone().lu();
        match lu.solve(&self.b) {
            Some(x) => {
                self.x = x;
                Ok(())
            }
            None => Err(singular(&self.a)),
        }
    }

    // `self.e` already holds the trace used in this step's update.
    fn solve_rank_one(&mut self, eta: f64, d: &DVector<f64>) -> Result<()> {
        let refresh = self.k % SM_REFRESH == 0;
        let updated = match self.a_inv.take() {
            Some(inv) if !refresh => {
                let c = eta / (1.0 - eta);
                let u = &inv * &self.e;
                let v = inv.tr_mul(d);
                let denom = 1.0 + c * d.dot(&u);
                if denom.abs() > 1e-10 {
                    let mut next = inv;
                    next.ger(-c / denom, &u, &v, 1.0);
                    next /= 1.0 - eta;
                    Some(next)
                } else {
                    None
                }
            }
            _ => None,
        };
        let inv = match updated {
            Some(inv) => inv,
            None => self.a.clone().try_inverse().ok_or_else(|| singular(&self.a))?,
        };
        self.x = &inv * &self.b;
        self.a_inv = Some(inv);
        Ok(())
    }
}

/// Result of a Predict call.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictOutput {
    /// ℓ_N, the objective estimate.
    pub objective: f64,
    /// x_N.
    pub solution: DVector<f64>,
}

/// A stored path with φ and the behaviour log-probabilities cached, so
/// repeated Predict calls with different targets only pay for the target.
pub struct PreparedPath<'a, S, A> {
    records: &'a [Transition<S, A>],
    k1: usize,
    phi: Vec<f64>,
    log_behaviour: Vec<f64>,
    labels: Vec<Option<usize>>,
}

impl<'a, S: Field, A: Field> PreparedPath<'a, S, A> {
    pub fn new<F, B>(records: &'a [Transition<S, A>], features: &F, behaviour: &B) -> Self
    where
        F: FeatureMap<S>,
        B: Policy<S, A>,
    {
        let k1 = features.dim();
        let n = records.len();
        let mut phi = vec![0.0; (n + 1) * k1];
        let mut labels = Vec::with_capacity(n + 1);
        for (k, t) in records.iter().enumerate() {
            features.write(&t.state, &mut phi[k * k1..(k + 1) * k1]);
            labels.push(t.state.label());
        }
        if let Some(t) = records.last() {
            features.write(&t.next_state, &mut phi[n * k1..]);
            labels.push(t.next_state.label());
        }
        let log_behaviour = records
            .iter()
            .map(|t| behaviour.log_prob(&t.state, &t.action))
            .collect();
        Self {
            records,
            k1,
            phi,
            log_behaviour,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.k1
    }

    pub fn phi(&self, k: usize) -> &[f64] {
        &self.phi[k * self.k1..(k + 1) * self.k1]
    }

    pub fn ratio<T: Policy<S, A>>(&self, target: &T, k: usize) -> Result<f64> {
        let t = &self.records[k];
        ratio_from_logs(target.log_prob(&t.state, &t.action), self.log_behaviour[k])
    }

    /// Algorithm-1 fold over the first `n` transitions.
    pub fn predict<T: Policy<S, A>>(
        &self,
        target: &T,
        n: usize,
        cfg: &PredictConfig,
        perf: &Performance,
    ) -> Result<PredictOutput> {
        if n > self.len() {
            return Err(Error::InsufficientData {
                available: self.len(),
                requested: n,
            });
        }
        perf.check_dim(self.k1)?;
        if perf.needs_label() && self.labels.iter().any(Option::is_none) {
            return Err(Error::config("performance function needs tabular states"));
        }
        let mut st = predict_init(self.k1, cfg.ridge);
        for k in 0..n {
            let rho = self.ratio(target, k)?;
            st.step(
                self.phi(k),
                self.phi(k + 1),
                rho,
                self.records[k].reward,
                self.labels[k + 1],
                cfg,
                perf,
            )?;
        }
        Ok(PredictOutput {
            objective: st.ell,
            solution: st.x,
        })
    }
}

/// Predict over the first `n` records without reusing any cache.
pub fn predict<S, A, F, T, B>(
    records: &[Transition<S, A>],
    n: usize,
    features: &F,
    target: &T,
    behaviour: &B,
    cfg: &PredictConfig,
    perf: &Performance,
) -> Result<PredictOutput>
where
    S: Field,
    A: Field,
    F: FeatureMap<S>,
    T: Policy<S, A>,
    B: Policy<S, A>,
{
    if n > records.len() {
        return Err(Error::InsufficientData {
            available: records.len(),
            requested: n,
        });
    }
    cfg.validate()?;
    PreparedPath::new(&records[..n], features, behaviour).predict(target, n, cfg, perf)
}

/// Off-policy TD(λ) iterate.
#[derive(Clone, Debug, PartialEq)]
pub struct TdLambdaState {
    pub x: DVector<f64>,
    pub e: DVector<f64>,
    rho_prev: f64,
    k: usize,
}

impl TdLambdaState {
    pub fn new(k1: usize) -> Self {
        Self {
            x: DVector::zeros(k1),
            e: DVector::zeros(k1),
            rho_prev: 0.0,
            k: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.k
    }

    /// x ← x + α δ e with δ = ρr + γρ xᵀφ(s′) − xᵀφ(s). The trace ordering
    /// matches [`PredictState::step`].
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        phi_s: &[f64],
        phi_next: &[f64],
        rho: f64,
        reward: f64,
        cfg: &PredictConfig,
        alpha: f64,
    ) {
        let gamma = cfg.discount;
        if !cfg.literal_trace_order {
            self.e *= gamma * cfg.lambda * self.rho_prev;
            self.e += DVector::from_column_slice(phi_s);
        }
        let xs = dot(self.x.as_slice(), phi_s);
        let xn = dot(self.x.as_slice(), phi_next);
        let delta = rho * reward + gamma * rho * xn - xs;
        self.x.axpy(alpha * delta, &self.e, 1.0);
        if cfg.literal_trace_order {
            self.e *= gamma * cfg.lambda * rho;
            self.e += DVector::from_column_slice(phi_s);
        }
        self.rho_prev = rho;
        self.k += 1;
    }
}

/// One off-policy TD(λ) step on a transition, evaluating ρ from the policies.
#[allow(clippy::too_many_arguments)]
pub fn td_lambda_step<S, A, F, T, B>(
    state: &mut TdLambdaState,
    t: &Transition<S, A>,
    features: &F,
    target: &T,
    behaviour: &B,
    cfg: &PredictConfig,
    alpha: f64,
) -> Result<()>
where
    F: FeatureMap<S>,
    T: Policy<S, A>,
    B: Policy<S, A>,
{
    let rho = ratio_from_logs(target.log_prob(&t.state, &t.action), behaviour.log_prob(&t.state, &t.action))?;
    let phi_s = features.eval(&t.state);
    let phi_n = features.eval(&t.next_state);
    state.step(phi_s.as_slice(), phi_n.as_slice(), rho, t.reward, cfg, alpha);
    Ok(())
}
