//! Soft-max and linear-Gaussian stochastic policies and the sampling ratio.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ActionFeatureMap;
use crate::mdp::ActionTable;

pub trait Policy<S, A> {
    /// ln π(a|s); −∞ when the action is impossible.
    fn log_prob(&self, s: &S, a: &A) -> f64;

    fn prob(&self, s: &S, a: &A) -> f64 {
        self.log_prob(s, a).exp()
    }

    fn sample<R: Rng + ?Sized>(&self, s: &S, rng: &mut R) -> A;
}

/// ρ = π_target(a|s) / π_behaviour(a|s) with 0/0 = 0.
pub fn importance_ratio<S, A, T, B>(target: &T, behaviour: &B, s: &S, a: &A) -> Result<f64>
where
    T: Policy<S, A>,
    B: Policy<S, A>,
{
    ratio_from_logs(target.log_prob(s, a), behaviour.log_prob(s, a))
}

pub fn ratio_from_logs(log_target: f64, log_behaviour: f64) -> Result<f64> {
    if log_behaviour == f64::NEG_INFINITY {
        if log_target == f64::NEG_INFINITY {
            Ok(0.0)
        } else {
            Err(Error::AbsoluteContinuity {
                target: log_target.exp(),
            })
        }
    } else if log_target == log_behaviour {
        Ok(1.0)
    } else {
        Ok((log_target - log_behaviour).exp())
    }
}

/// Gibbs policy π(a|s) ∝ exp(wᵀψ(s,a)/τ).
#[derive(Clone, Debug)]
pub struct SoftmaxPolicy<F> {
    features: F,
    weights: Vec<f64>,
    temperature: f64,
}

impl<F> SoftmaxPolicy<F> {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn features(&self) -> &F {
        &self.features
    }
}

impl<F> SoftmaxPolicy<F> {
    pub fn new<S: ?Sized>(features: F, weights: Vec<f64>, temperature: f64) -> Result<Self>
    where
        F: ActionFeatureMap<S>,
    {
        if weights.len() != features.dim() {
            return Err(Error::Dimension {
                what: "soft-max weight vector",
                expected: features.dim(),
                got: weights.len(),
            });
        }
        if !(temperature > 0.0) {
            return Err(Error::config("soft-max temperature must be positive"));
        }
        Ok(Self {
            features,
            weights,
            temperature,
        })
    }

    fn logits<S: ?Sized>(&self, s: &S, out: &mut [f64])
    where
        F: ActionFeatureMap<S>,
    {
        let mut psi = vec![0.0; self.features.dim()];
        for (a, o) in out.iter_mut().enumerate() {
            self.features.write(s, a, &mut psi);
            let z: f64 = psi.iter().zip(&self.weights).map(|(p, w)| p * w).sum();
            *o = z / self.temperature;
        }
    }

    /// Writes π(·|s) into `out` using shifted exponents.
    pub fn probabilities<S: ?Sized>(&self, s: &S, out: &mut [f64])
    where
        F: ActionFeatureMap<S>,
    {
        self.logits(s, out);
        let m = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - m).exp();
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
    }

    pub fn softmax_prob<S: ?Sized>(&self, s: &S, a: usize) -> f64
    where
        F: ActionFeatureMap<S>,
    {
        let mut p = vec![0.0; self.features.num_actions()];
        self.probabilities(s, &mut p);
        p[a]
    }

    /// π(a|s) for every state of a finite chain.
    pub fn table(&self, num_states: usize) -> ActionTable
    where
        F: ActionFeatureMap<usize>,
    {
        let m = self.features.num_actions();
        let mut t = DMatrix::zeros(num_states, m);
        let mut p = vec![0.0; m];
        for s in 0..num_states {
            self.probabilities(&s, &mut p);
            for a in 0..m {
                t[(s, a)] = p[a];
            }
        }
        t
    }
}

impl<S, F: ActionFeatureMap<S>> Policy<S, usize> for SoftmaxPolicy<F> {
    fn log_prob(&self, s: &S, a: &usize) -> f64 {
        let mut z = vec![0.0; self.features.num_actions()];
        self.logits(s, &mut z);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        z[*a] - lse
    }

    fn prob(&self, s: &S, a: &usize) -> f64 {
        self.softmax_prob(s, *a)
    }

    fn sample<R: Rng + ?Sized>(&self, s: &S, rng: &mut R) -> usize {
        let mut p = vec![0.0; self.features.num_actions()];
        self.probabilities(s, &mut p);
        sample_index(&p, rng)
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Any fixed action table used as a policy over state indices.
#[derive(Clone, Debug, PartialEq)]
pub struct TablePolicy(pub ActionTable);

impl Policy<usize, usize> for TablePolicy {
    fn log_prob(&self, s: &usize, a: &usize) -> f64 {
        self.0[(*s, *a)].ln()
    }

    fn prob(&self, s: &usize, a: &usize) -> f64 {
        self.0[(*s, *a)]
    }

    fn sample<R: Rng + ?Sized>(&self, s: &usize, rng: &mut R) -> usize {
        let row: Vec<f64> = self.0.row(*s).iter().cloned().collect();
        sample_index(&row, rng)
    }
}

/// How the trailing entries of a flat Gaussian-policy parameter vector are
/// read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleParam {
    /// Entries are standard deviations σ_i; the variance is σ_i².
    StdDev,
    /// Entries are the variances themselves.
    Variance,
}

/// a ~ N(K s, diag(var)).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianPolicy {
    gain: DMatrix<f64>,
    variance: Vec<f64>,
}

impl LinearGaussianPolicy {
    pub fn new(gain: DMatrix<f64>, variance: Vec<f64>) -> Result<Self> {
        if variance.len() != gain.nrows() {
            return Err(Error::Dimension {
                what: "covariance diagonal",
                expected: gain.nrows(),
                got: variance.len(),
            });
        }
        if variance.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::config("Gaussian policy variances must be positive"));
        }
        Ok(Self { gain, variance })
    }

    /// Reads `w = (K row-major, scale entries)`. Scale entries are taken in
    /// absolute value and floored so every parameter vector yields a policy.
    pub fn from_params(
        w: &[f64],
        state_dim: usize,
        action_dim: usize,
        scale: ScaleParam,
        floor: f64,
    ) -> Result<Self> {
        let expected = action_dim * state_dim + action_dim;
        if w.len() != expected {
            return Err(Error::Dimension {
                what: "Gaussian policy parameters",
                expected,
                got: w.len(),
            });
        }
        let gain = DMatrix::from_row_slice(action_dim, state_dim, &w[..action_dim * state_dim]);
        let variance = w[action_dim * state_dim..]
            .iter()
            .map(|x| {
                let v = match scale {
                    ScaleParam::StdDev => x * x,
                    ScaleParam::Variance => x.abs(),
                };
                v.max(floor)
            })
            .collect();
        Self::new(gain, variance)
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn mean(&self, s: &[f64]) -> DVector<f64> {
        &self.gain * DVector::from_column_slice(s)
    }

    pub fn log_density(&self, s: &[f64], a: &[f64]) -> f64 {
        let mu = self.mean(s);
        mu.iter()
            .zip(a)
            .zip(&self.variance)
            .map(|((m, x), v)| -0.5 * (2.0 * PI * v).ln() - (x - m) * (x - m) / (2.0 * v))
            .sum()
    }

    pub fn gaussian_density(&self, s: &[f64], a: &[f64]) -> f64 {
        self.log_density(s, a).exp()
    }
}

impl Policy<Vec<f64>, Vec<f64>> for LinearGaussianPolicy {
    fn log_prob(&self, s: &Vec<f64>, a: &Vec<f64>) -> f64 {
        self.log_density(s, a)
    }

    fn sample<R: Rng + ?Sized>(&self, s: &Vec<f64>, rng: &mut R) -> Vec<f64> {
        let mu = self.mean(s);
        mu.iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

/// Maps a flat parameter vector w ∈ 𝕎 to a policy.
pub trait PolicyFamily<S, A> {
    type Policy: Policy<S, A>;
    fn dim(&self) -> usize;
    fn policy(&self, w: &[f64]) -> Result<Self::Policy>;
}

#[derive(Clone, Debug)]
pub struct SoftmaxFamily<F> {
    pub features: F,
    pub temperature: f64,
}

impl<S, F: ActionFeatureMap<S> + Clone> PolicyFamily<S, usize> for SoftmaxFamily<F> {
    type Policy = SoftmaxPolicy<F>;

    fn dim(&self) -> usize {
        self.features.dim()
    }

    fn policy(&self, w: &[f64]) -> Result<Self::Policy> {
        SoftmaxPolicy::new::<S>(self.features.clone(), w.to_vec(), self.temperature)
    }
}

#[derive(Clone, Debug)]
pub struct GaussianFamily {
    pub state_dim: usize,
    pub action_dim: usize,
    pub scale: ScaleParam,
    pub floor: f64,
}

impl PolicyFamily<Vec<f64>, Vec<f64>> for GaussianFamily {
    type Policy = LinearGaussianPolicy;

    fn dim(&self) -> usize {
        self.action_dim * (self.state_dim + 1)
    }

    fn policy(&self, w: &[f64]) -> Result<Self::Policy> {
        LinearGaussianPolicy::from_params(w, self.state_dim, self.action_dim, self.scale, self.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::StateTimesAction;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct ActionIndex;
    impl ActionFeatureMap<usize> for ActionIndex {
        fn dim(&self) -> usize {
            1
        }
        fn num_actions(&self) -> usize {
            2
        }
        fn write(&self, _s: &usize, a: usize, out: &mut [f64]) {
            out[0] = a as f64;
        }
    }

    #[test]
    fn two_action_softmax_by_hand() {
        let tau = 3.0;
        let p = SoftmaxPolicy::new(ActionIndex, vec![2f64.ln() * tau], tau).unwrap();
        assert_relative_eq!(p.softmax_prob(&0, 1), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(Policy::log_prob(&p, &0, &1), (2.0f64 / 3.0).ln(), epsilon = 1e-15);
    }

    #[test]
    fn zero_weights_are_uniform() {
        let p = SoftmaxPolicy::new(StateTimesAction { num_actions: 2 }, vec![0.0], 10.0).unwrap();
        let t = p.table(4);
        assert!(t.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn ratio_conventions() {
        assert_eq!(ratio_from_logs(f64::NEG_INFINITY, f64::NEG_INFINITY).unwrap(), 0.0);
        assert!(ratio_from_logs(-1.0, f64::NEG_INFINITY).is_err());
        assert_eq!(ratio_from_logs(-0.3, -0.3).unwrap(), 1.0);
        let t = TablePolicy(DMatrix::from_row_slice(1, 2, &[0.2, 0.8]));
        let b = TablePolicy(DMatrix::from_row_slice(1, 2, &[0.5, 0.5]));
        assert_relative_eq!(importance_ratio(&t, &b, &0, &1).unwrap(), 1.6, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_mode_density() {
        let p = LinearGaussianPolicy::new(DMatrix::from_row_slice(1, 1, &[2.0]), vec![1.0]).unwrap();
        assert_relative_eq!(
            p.gaussian_density(&[1.5], &[3.0]),
            1.0 / (2.0 * PI).sqrt(),
            epsilon = 1e-15
        );
        let q = LinearGaussianPolicy::new(DMatrix::from_row_slice(1, 1, &[2.0]), vec![4.0]).unwrap();
        assert_relative_eq!(
            q.gaussian_density(&[1.5], &[3.0]),
            0.5 * p.gaussian_density(&[1.5], &[3.0]),
            epsilon = 1e-15
        );
    }

    #[test]
    fn gaussian_params_layout() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, -0.5, 0.0];
        let p = LinearGaussianPolicy::from_params(&w, 3, 2, ScaleParam::StdDev, 1e-6).unwrap();
        assert_eq!(p.gain()[(1, 0)], 4.0);
        assert_eq!(p.variance(), &[0.25, 1e-6]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = SoftmaxPolicy::new(ActionIndex, vec![0.3], 1.0).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| p.sample(&0, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }
}
