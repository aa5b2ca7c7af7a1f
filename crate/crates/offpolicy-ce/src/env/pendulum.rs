use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, wrap_angle, Environment, StartState};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkPendulumParams {
    pub links: usize,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub noise_std: f64,
    pub discount: f64,
}

impl Default for LinkPendulumParams {
    fn default() -> Self {
        Self {
            links: 5,
            mass: 1.5,
            length: 10.0,
            gravity: 9.8,
            dt: 0.1,
            noise_std: 1.0,
            discount: 0.1,
        }
    }
}

pub const ANGULAR_VELOCITY_BOUND: f64 = 5.0;

/// n-link actuated pendulum linearized around the horizontal position.
#[derive(Clone, Debug)]
pub struct LinkPendulum {
    pub params: LinkPendulumParams,
    pub start: StartState,
    mass_matrix: DMatrix<f64>,
    minv: DMatrix<f64>,
    minv_u: DMatrix<f64>,
}

impl LinkPendulum {
    pub fn new(params: LinkPendulumParams) -> Result<Self> {
        let n = params.links;
        if n == 0 {
            return Err(Error::config("pendulum needs at least one link"));
        }
        let (m, l, g) = (params.mass, params.length, params.gravity);
        // 1-based: M_ij = l²((n+1) - max(i,j)) m, U_ii = -g l ((n+1) - i) m.
        let mass_matrix =
            DMatrix::from_fn(n, n, |i, j| l * l * (n - i.max(j)) as f64 * m);
        let u = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -g * l * (n - i) as f64 * m
            } else {
                0.0
            }
        });
        let chol = mass_matrix.clone().cholesky().ok_or(Error::Singular {
            context: "pendulum mass matrix",
            detail: "not positive definite".into(),
        })?;
        let minv = chol.inverse();
        let minv_u = &minv * &u;
        let start = StartState::Uniform(
            (0..2 * n)
                .map(|i| {
                    if i < n {
                        (-PI, PI)
                    } else {
                        (-ANGULAR_VELOCITY_BOUND, ANGULAR_VELOCITY_BOUND)
                    }
                })
                .collect(),
        );
        Ok(Self {
            params,
            start,
            mass_matrix,
            minv,
            minv_u,
        })
    }

    pub fn links(&self) -> usize {
        self.params.links
    }

    pub fn mass_matrix(&self) -> &DMatrix<f64> {
        &self.mass_matrix
    }

    /// q ← q + Δt q̇; q̇ ← q̇ - Δt M⁻¹U q + Δt M⁻¹ a + z. Reward -qᵀq at the
    /// current state.
    pub fn pendulum_step(&self, s: &[f64], a: &[f64], z: &[f64]) -> (Vec<f64>, f64) {
        let n = self.params.links;
        let dt = self.params.dt;
        let q = DVector::from_column_slice(&s[..n]);
        let dq = DVector::from_column_slice(&s[n..]);
        let a = DVector::from_column_slice(a);
        let dq_next = &dq - (&self.minv_u * &q) * dt + (&self.minv * a) * dt;
        let mut next = Vec::with_capacity(2 * n);
        next.extend((0..n).map(|i| wrap_angle(q[i] + dt * dq[i])));
        next.extend((0..n).map(|i| {
            (dq_next[i] + z[i]).clamp(-ANGULAR_VELOCITY_BOUND, ANGULAR_VELOCITY_BOUND)
        }));
        (next, -q.norm_squared())
    }
}

impl Environment for LinkPendulum {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.start.draw(rng)
    }

    fn step<R: Rng + ?Sized>(&self, s: &Vec<f64>, a: &Vec<f64>, rng: &mut R) -> (Vec<f64>, f64) {
        let z: Vec<f64> = (0..self.params.links)
            .map(|_| gaussian(rng, self.params.noise_std))
            .collect();
        self.pendulum_step(s, a, &z)
    }
}
