use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gaussian, wrap_angle, Environment, StartState};

/// Physical constants of the linearized cart-pole.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleParams {
    pub pole_mass: f64,
    pub cart_mass: f64,
    pub pole_length: f64,
    pub friction: f64,
    pub gravity: f64,
    pub dt: f64,
    /// Drop g from the angular row of the linear system.
    pub literal_dynamics: bool,
    pub noise_std: f64,
    pub discount: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            pole_mass: 0.5,
            cart_mass: 0.5,
            pole_length: 20.5,
            friction: 0.1,
            gravity: 9.81,
            dt: 0.1,
            literal_dynamics: false,
            noise_std: 1.0,
            discount: 0.1,
        }
    }
}

pub const VELOCITY_BOUND: f64 = 5.0;
pub const POSITION_BOUND: f64 = 4.0;

/// One Euler step of the linearized system on the state (ψ, ψ̇, x, ẋ);
/// `z` perturbs the cart velocity. Returns the next state and
/// R = -4ψ² - x² - 0.1a² evaluated at the current state.
pub fn cartpole_step(p: &CartPoleParams, s: &[f64], a: f64, z: f64) -> (Vec<f64>, f64) {
    let (psi, dpsi, x, dx) = (s[0], s[1], s[2], s[3]);
    let (m, mm, l, b) = (p.pole_mass, p.cart_mass, p.pole_length, p.friction);
    let g_ang = if p.literal_dynamics { 1.0 } else { p.gravity };
    let ddpsi = (3.0 * (mm + m) * g_ang * psi - 3.0 * a + 3.0 * b * dpsi) / (4.0 * mm * l - m * l);
    let ddx = (3.0 * m * p.gravity * psi + 4.0 * a - 4.0 * b * dpsi) / (4.0 * mm - m);
    let next = vec![
        wrap_angle(psi + p.dt * dpsi),
        (dpsi + p.dt * ddpsi).clamp(-VELOCITY_BOUND, VELOCITY_BOUND),
        (x + p.dt * dx).clamp(-POSITION_BOUND, POSITION_BOUND),
        (dx + p.dt * ddx + z).clamp(-VELOCITY_BOUND, VELOCITY_BOUND),
    ];
    let reward = -4.0 * psi * psi - x * x - 0.1 * a * a;
    (next, reward)
}

#[derive(Clone, Debug)]
pub struct CartPole {
    pub params: CartPoleParams,
    pub start: StartState,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        Self {
            params,
            start: StartState::Uniform(Self::bounds().to_vec()),
        }
    }

    pub fn bounds() -> [(f64, f64); 4] {
        [
            (-PI, PI),
            (-VELOCITY_BOUND, VELOCITY_BOUND),
            (-POSITION_BOUND, POSITION_BOUND),
            (-VELOCITY_BOUND, VELOCITY_BOUND),
        ]
    }
}

impl Environment for CartPole {
    type State = Vec<f64>;
    type Action = Vec<f64>;

    fn discount(&self) -> f64 {
        self.params.discount
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.start.draw(rng)
    }

    fn step<R: Rng + ?Sized>(&self, s: &Vec<f64>, a: &Vec<f64>, rng: &mut R) -> (Vec<f64>, f64) {
        let z = gaussian(rng, self.params.noise_std);
        cartpole_step(&self.params, s, a[0], z)
    }
}
