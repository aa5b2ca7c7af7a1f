//! Prediction features φ(s) and policy features ψ(s,a).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FeatureMatrix;

/// A map from states to ℝ^k.
pub trait FeatureMap<S: ?Sized> {
    fn dim(&self) -> usize;
    fn write(&self, s: &S, out: &mut [f64]);

    fn eval(&self, s: &S) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        self.write(s, v.as_mut_slice());
        v
    }
}

impl<S: ?Sized, F: FeatureMap<S> + ?Sized> FeatureMap<S> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn write(&self, s: &S, out: &mut [f64]) {
        (**self).write(s, out)
    }
}

/// Stacks φ(s) for s = 0..n into an n × k matrix.
pub fn feature_matrix<F: FeatureMap<usize> + ?Sized>(f: &F, num_states: usize) -> FeatureMatrix {
    let k = f.dim();
    let mut m = DMatrix::zeros(num_states, k);
    let mut row = vec![0.0; k];
    for s in 0..num_states {
        f.write(&s, &mut row);
        for (j, v) in row.iter().enumerate() {
            m[(s, j)] = *v;
        }
    }
    m
}

/// Gaussian radial basis functions b_i(s) = exp(-(s - m_i)² / (2 v_i²)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbfSpec {
    centers: Vec<f64>,
    spreads: Vec<f64>,
}

impl RbfSpec {
    pub fn new(centers: Vec<f64>, spreads: Vec<f64>) -> Result<Self> {
        if centers.len() != spreads.len() || centers.is_empty() {
            return Err(Error::config("RBF centers and spreads must be non-empty and equally long"));
        }
        if spreads.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::config("RBF spreads must be positive"));
        }
        Ok(Self { centers, spreads })
    }

    /// Centers m_i = 5 + 10(i-1) with spread 5, independent of the chain size.
    pub fn fixed_decade(count: usize) -> Self {
        let centers = (0..count).map(|i| 5.0 + 10.0 * i as f64).collect();
        Self {
            centers,
            spreads: vec![5.0; count],
        }
    }

    /// `count` evenly spaced bumps covering `num_states` states: spacing
    /// h = n/count, centers h/2 + i·h, spread h/2. At n = 50 this is the
    /// same as [`RbfSpec::fixed_decade`].
    pub fn uniform(num_states: usize, count: usize) -> Self {
        let h = num_states as f64 / count as f64;
        let centers = (0..count).map(|i| 0.5 * h + h * i as f64).collect();
        Self {
            centers,
            spreads: vec![0.5 * h; count],
        }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    pub fn rbf_value(&self, i: usize, s: f64) -> f64 {
        let d = s - self.centers[i];
        let v = self.spreads[i];
        (-(d * d) / (2.0 * v * v)).exp()
    }
}

impl FeatureMap<usize> for RbfSpec {
    fn dim(&self) -> usize {
        self.centers.len()
    }

    fn write(&self, s: &usize, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rbf_value(i, *s as f64);
        }
    }
}

/// Features read off the rows of an explicit matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularFeatures(pub FeatureMatrix);

impl TabularFeatures {
    pub fn identity(num_states: usize) -> Self {
        Self(DMatrix::identity(num_states, num_states))
    }
}

impl FeatureMap<usize> for TabularFeatures {
    fn dim(&self) -> usize {
        self.0.ncols()
    }

    fn write(&self, s: &usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.0[(*s, j)];
        }
    }
}

pub fn quadratic_len(d: usize) -> usize {
    1 + d + d * d.saturating_sub(1) / 2
}

/// (1, s_1², …, s_d², s_1 s_2, s_1 s_3, …, s_{d-1} s_d).
pub fn quadratic_features(s: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; quadratic_len(s.len())];
    write_quadratic(s, &mut out);
    out
}

fn write_quadratic(s: &[f64], out: &mut [f64]) {
    let d = s.len();
    out[0] = 1.0;
    for i in 0..d {
        out[1 + i] = s[i] * s[i];
    }
    let mut k = 1 + d;
    for i in 0..d {
        for j in i + 1..d {
            out[k] = s[i] * s[j];
            k += 1;
        }
    }
}

/// Quadratic monomials of a real state vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadraticFeatures {
    pub state_dim: usize,
}

impl FeatureMap<Vec<f64>> for QuadraticFeatures {
    fn dim(&self) -> usize {
        quadratic_len(self.state_dim)
    }

    fn write(&self, s: &Vec<f64>, out: &mut [f64]) {
        write_quadratic(s, out)
    }
}

/// Features ψ(s,a) for policies over a finite action set.
pub trait ActionFeatureMap<S: ?Sized> {
    fn dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn write(&self, s: &S, a: usize, out: &mut [f64]);
}

impl<S: ?Sized, F: ActionFeatureMap<S> + ?Sized> ActionFeatureMap<S> for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn write(&self, s: &S, a: usize, out: &mut [f64]) {
        (**self).write(s, a, out)
    }
}

/// ψ(s,a) places φ(s) in the block belonging to action a and zeros elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionBlocks<F> {
    pub base: F,
    pub num_actions: usize,
}

impl<S: ?Sized, F: FeatureMap<S>> ActionFeatureMap<S> for ActionBlocks<F> {
    fn dim(&self) -> usize {
        self.base.dim() * self.num_actions
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn write(&self, s: &S, a: usize, out: &mut [f64]) {
        let k = self.base.dim();
        out.iter_mut().for_each(|o| *o = 0.0);
        self.base.write(s, &mut out[a * k..(a + 1) * k]);
    }
}

/// Scalar feature ψ(s,a) = s·a.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StateTimesAction {
    pub num_actions: usize,
}

impl ActionFeatureMap<usize> for StateTimesAction {
    fn dim(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn write(&self, s: &usize, a: usize, out: &mut [f64]) {
        out[0] = (*s * a) as f64;
    }
}

/// ψ(s,a) = e_{(s·|A| + a) mod k}: rows of a stacked identity pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CyclicIndicator {
    pub dim: usize,
    pub num_actions: usize,
}

impl ActionFeatureMap<usize> for CyclicIndicator {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn write(&self, s: &usize, a: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[(*s * self.num_actions + a) % self.dim] = 1.0;
    }
}

/// ψ(s,a) read from an explicit (state, action) → ℝ^k table.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularActionFeatures {
    dim: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl TabularActionFeatures {
    /// `values` is laid out as [s][a][k].
    pub fn new(num_states: usize, num_actions: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions * dim {
            return Err(Error::Dimension {
                what: "tabular action features",
                expected: num_states * num_actions * dim,
                got: values.len(),
            });
        }
        Ok(Self {
            dim,
            num_actions,
            values,
        })
    }
}

impl ActionFeatureMap<usize> for TabularActionFeatures {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn write(&self, s: &usize, a: usize, out: &mut [f64]) {
        let at = (*s * self.num_actions + a) * self.dim;
        out.copy_from_slice(&self.values[at..at + self.dim]);
    }
}
