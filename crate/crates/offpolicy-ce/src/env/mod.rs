//! Experimental MDPs: tabular builders and continuous simulators.

mod cartpole;
mod chain_walk;
mod pendulum;
mod random_mdp;
mod self_drive;

pub use cartpole::{cartpole_step, CartPole, CartPoleParams, POSITION_BOUND, VELOCITY_BOUND};
pub use chain_walk::{build_chain_walk, build_chain_walk_with, chain_walk_reward_states, LEFT, RIGHT};
pub use pendulum::{LinkPendulum, LinkPendulumParams, ANGULAR_VELOCITY_BOUND};
pub use random_mdp::{build_random_mdp, RandomMdpConfig};
pub use self_drive::{
    build_self_drive, self_drive_features, SelfDriveTerminal, FINISH, HALT, PROCEED, SELF_DRIVE_LAMBDA,
    SELF_DRIVE_TEMPERATURE,
};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::mdp::FiniteMdp;

/// A simulator that produces one transition at a time.
pub trait Environment {
    type State: Clone;
    type Action: Clone;

    fn discount(&self) -> f64;
    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;
    fn step<R: Rng + ?Sized>(
        &self,
        s: &Self::State,
        a: &Self::Action,
        rng: &mut R,
    ) -> (Self::State, f64);
}

/// A finite MDP used as a simulator. Without a fixed start the first state
/// is drawn uniformly.
#[derive(Clone, Debug)]
pub struct TabularEnv {
    pub mdp: FiniteMdp,
    pub start: Option<usize>,
}

impl TabularEnv {
    pub fn new(mdp: FiniteMdp) -> Self {
        Self { mdp, start: None }
    }
}

impl Environment for TabularEnv {
    type State = usize;
    type Action = usize;

    fn discount(&self) -> f64 {
        self.mdp.discount()
    }

    fn initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.start
            .unwrap_or_else(|| rng.random_range(0..self.mdp.num_states()))
    }

    fn step<R: Rng + ?Sized>(&self, s: &usize, a: &usize, rng: &mut R) -> (usize, f64) {
        let t = self.mdp.sample_next(*s, *a, rng);
        (t, self.mdp.r(*s, *a, t))
    }
}

/// Where a continuous trajectory starts.
#[derive(Clone, Debug, PartialEq)]
pub enum StartState {
    Fixed(Vec<f64>),
    /// Independent uniforms on the given per-coordinate intervals.
    Uniform(Vec<(f64, f64)>),
}

impl StartState {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            StartState::Fixed(s) => s.clone(),
            StartState::Uniform(b) => b
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
                .collect(),
        }
    }
}

pub(crate) fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::PI;
    if (-PI..=PI).contains(&x) {
        x
    } else {
        (x + PI).rem_euclid(2.0 * PI) - PI
    }
}

pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    std * z
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn wrap_stays_in_range() {
        for x in [-10.0, -PI, -1.0, 0.0, 3.0, PI, 7.0, 100.0] {
            let w = wrap_angle(x);
            assert!((-PI..=PI).contains(&w), "{x} -> {w}");
            assert!(((x - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((x - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
        }
    }
}
