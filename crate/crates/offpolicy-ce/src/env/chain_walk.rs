use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// States ⌊n/3⌋ and ⌊2n/3⌋ (150 and 300 when n = 450).
pub fn chain_walk_reward_states(num_states: usize) -> [usize; 2] {
    [num_states / 3, 2 * num_states / 3]
}

pub fn build_chain_walk(num_states: usize) -> Result<FiniteMdp> {
    build_chain_walk_with(num_states, &chain_walk_reward_states(num_states), 0.99)
}

/// Slippery walk: the chosen direction succeeds w.p. 0.9; the end states
/// bounce back into themselves. Reward 1 on every transition that enters a
/// reward state.
pub fn build_chain_walk_with(
    num_states: usize,
    reward_states: &[usize],
    discount: f64,
) -> Result<FiniteMdp> {
    let n = num_states;
    if n < 3 {
        return Err(Error::config("chain walk needs at least 3 states"));
    }
    if reward_states.iter().any(|&r| r >= n) {
        return Err(Error::config("reward state outside the chain"));
    }
    let kernel = |s: usize, a: usize, t: usize| -> f64 {
        let (fwd, back) = if a == RIGHT { (0.9, 0.1) } else { (0.1, 0.9) };
        let right = if s + 1 < n { s + 1 } else { s };
        let left = if s > 0 { s - 1 } else { s };
        let mut p = 0.0;
        if t == right {
            p += fwd;
        }
        if t == left {
            p += back;
        }
        p
    };
    FiniteMdp::from_fn(n, 2, discount, kernel, |_, _, t| {
        if reward_states.contains(&t) {
            1.0
        } else {
            0.0
        }
    })
}
