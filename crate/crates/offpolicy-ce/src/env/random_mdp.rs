use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::FiniteMdp;

/// Parameters of the random binomial MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpConfig {
    pub num_states: usize,
    pub num_actions: usize,
    /// ω1(s), one per state.
    pub omega1: Vec<f64>,
    /// ω2(s,a) in row-major (s, a) order.
    pub omega2: Vec<f64>,
    pub binomial_n: usize,
    pub discount: f64,
}

impl RandomMdpConfig {
    /// ω1(s) ~ U(1,4), ω2(s,a) ~ U(0,1), n = |S| - 1, γ = 0.8.
    pub fn sample<R: Rng + ?Sized>(num_states: usize, num_actions: usize, rng: &mut R) -> Self {
        let omega1 = (0..num_states).map(|_| rng.random_range(1.0..4.0)).collect();
        let omega2 = (0..num_states * num_actions)
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        Self {
            num_states,
            num_actions,
            omega1,
            omega2,
            binomial_n: num_states.saturating_sub(1),
            discount: 0.8,
        }
    }
}

fn binomial_row(n: usize, p: f64, len: usize, ln_fact: &[f64]) -> Vec<f64> {
    let mut row = vec![0.0; len];
    if p <= 0.0 {
        row[0] = 1.0;
        return row;
    }
    if p >= 1.0 {
        row[n] = 1.0;
        return row;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    for (k, r) in row.iter_mut().enumerate().take(n + 1) {
        let ln_c = ln_fact[n] - ln_fact[k] - ln_fact[n - k];
        *r = (ln_c + k as f64 * lp + (n - k) as f64 * lq).exp();
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|r| *r /= total);
    row
}

/// P(s,a,s') = C(n,s') ω2^{s'} (1-ω2)^{n-s'};
/// R(s,a,s') = ω1(s) ω1(s') (sin a + 2) / (1 + s')^{1/4}.
pub fn build_random_mdp(cfg: &RandomMdpConfig) -> Result<FiniteMdp> {
    let (ns, na, n) = (cfg.num_states, cfg.num_actions, cfg.binomial_n);
    if n + 1 > ns {
        return Err(Error::config(format!(
            "binomial support 0..={n} exceeds the {ns} states"
        )));
    }
    if cfg.omega1.len() != ns {
        return Err(Error::Dimension {
            what: "omega1",
            expected: ns,
            got: cfg.omega1.len(),
        });
    }
    if cfg.omega2.len() != ns * na {
        return Err(Error::Dimension {
            what: "omega2",
            expected: ns * na,
            got: cfg.omega2.len(),
        });
    }
    if cfg.omega2.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::config("omega2 entries must lie in [0,1]"));
    }
    let mut ln_fact = vec![0.0; n + 1];
    for k in 1..=n {
        ln_fact[k] = ln_fact[k - 1] + (k as f64).ln();
    }
    let mut kernel = Vec::with_capacity(ns * na * ns);
    let mut reward = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for a in 0..na {
            kernel.extend(binomial_row(n, cfg.omega2[s * na + a], ns, &ln_fact));
            let act = (a as f64).sin() + 2.0;
            for t in 0..ns {
                reward.push(cfg.omega1[s] * cfg.omega1[t] * act / (1.0 + t as f64).powf(0.25));
            }
        }
    }
    FiniteMdp::new(ns, na, kernel, reward, cfg.discount)
}
