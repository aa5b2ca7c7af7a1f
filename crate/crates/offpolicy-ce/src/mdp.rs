//! Exact tabular MDP machinery: induced chains, stationary laws, value
//! functions, weighted projections and the TD(λ) operator.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Row-stochastic matrix over states.
pub type ChainMatrix = DMatrix<f64>;
/// Distribution over states.
pub type StateDistribution = DVector<f64>;
/// One real number per state.
pub type ValueFunction = DVector<f64>;
/// One feature row φ(s) per state.
pub type FeatureMatrix = DMatrix<f64>;
/// π(a|s) with one row per state.
pub type ActionTable = DMatrix<f64>;

pub const STOCHASTIC_TOL: f64 = 1e-12;
pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITERS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteMdp {
    num_states: usize,
    num_actions: usize,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl FiniteMdp {
    /// `kernel` and `reward` are flattened in `[s][a][s']` order.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        kernel: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::config("an MDP needs at least one state and one action"));
        }
        let len = num_states * num_actions * num_states;
        if kernel.len() != len {
            return Err(Error::Dimension {
                what: "kernel entries",
                expected: len,
                got: kernel.len(),
            });
        }
        if reward.len() != len {
            return Err(Error::Dimension {
                what: "reward entries",
                expected: len,
                got: reward.len(),
            });
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::config(format!("discount {discount} outside (0,1)")));
        }
        for (i, row) in kernel.chunks(num_states).enumerate() {
            let (s, a) = (i / num_actions, i % num_actions);
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::config(format!("negative or invalid probability at ({s},{a})")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL * num_states as f64 {
                return Err(Error::config(format!(
                    "kernel row ({s},{a}) sums to {total}"
                )));
            }
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::config("reward contains a non-finite entry"));
        }
        Ok(Self {
            num_states,
            num_actions,
            kernel,
            reward,
            discount,
        })
    }

    pub fn from_fn(
        num_states: usize,
        num_actions: usize,
        discount: f64,
        kernel: impl Fn(usize, usize, usize) -> f64,
        reward: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut k = Vec::with_capacity(num_states * num_actions * num_states);
        let mut r = Vec::with_capacity(k.capacity());
        for s in 0..num_states {
            for a in 0..num_actions {
                for t in 0..num_states {
                    k.push(kernel(s, a, t));
                    r.push(reward(s, a, t));
                }
            }
        }
        Self::new(num_states, num_actions, k, r, discount)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    fn idx(&self, s: usize, a: usize, t: usize) -> usize {
        (s * self.num_actions + a) * self.num_states + t
    }

    pub fn p(&self, s: usize, a: usize, t: usize) -> f64 {
        self.kernel[self.idx(s, a, t)]
    }

    pub fn r(&self, s: usize, a: usize, t: usize) -> f64 {
        self.reward[self.idx(s, a, t)]
    }

    pub fn kernel_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.idx(s, a, 0);
        &self.kernel[i..i + self.num_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let i = self.idx(s, a, 0);
        &self.reward[i..i + self.num_states]
    }

    /// ‖R‖∞ = max |R(s,a,s')|.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn with_discount(mut self, discount: f64) -> Result<Self> {
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::config(format!("discount {discount} outside (0,1)")));
        }
        self.discount = discount;
        Ok(self)
    }

    pub fn sample_next<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let row = self.kernel_row(s, a);
        let mut acc = 0.0;
        let mut last = 0;
        for (t, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = t;
                if u < acc {
                    return t;
                }
            }
        }
        last
    }

    /// Plain-text form. Reals use the shortest representation that parses
    /// back to the same bits.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("finite-mdp 1\n");
        let _ = writeln!(out, "num_states {}", self.num_states);
        let _ = writeln!(out, "num_actions {}", self.num_actions);
        let _ = writeln!(out, "discount {:e}", self.discount);
        for (name, data) in [("kernel", &self.kernel), ("reward", &self.reward)] {
            out.push_str(name);
            out.push('\n');
            for s in 0..self.num_states {
                for a in 0..self.num_actions {
                    for t in 0..self.num_states {
                        let _ = writeln!(out, "{s} {a} {t} {:e}", data[self.idx(s, a, t)]);
                    }
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                detail: format!("unexpected end of input, expected {what}"),
            })
        };
        let (ln, magic) = next("header")?;
        if magic.split_whitespace().next() != Some("finite-mdp") {
            return Err(Error::Parse {
                line: ln,
                detail: "missing finite-mdp header".into(),
            });
        }
        let n: usize = parse_keyed(next("num_states")?, "num_states")?;
        let m: usize = parse_keyed(next("num_actions")?, "num_actions")?;
        let discount: f64 = parse_keyed(next("discount")?, "discount")?;
        let len = n * m * n;
        let mut blocks = [vec![f64::NAN; len], vec![f64::NAN; len]];
        for (bi, name) in ["kernel", "reward"].iter().enumerate() {
            let (ln, tag) = next(name)?;
            if tag != *name {
                return Err(Error::Parse {
                    line: ln,
                    detail: format!("expected section `{name}`, found `{tag}`"),
                });
            }
            for _ in 0..len {
                let (ln, l) = next("triple")?;
                let f: Vec<&str> = l.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(Error::Parse {
                        line: ln,
                        detail: "expected `s a s' value`".into(),
                    });
                }
                let bad = |d: &str| Error::Parse {
                    line: ln,
                    detail: d.to_string(),
                };
                let s: usize = f[0].parse().map_err(|_| bad("bad state"))?;
                let a: usize = f[1].parse().map_err(|_| bad("bad action"))?;
                let t: usize = f[2].parse().map_err(|_| bad("bad next state"))?;
                let v: f64 = f[3].parse().map_err(|_| bad("bad value"))?;
                if s >= n || a >= m || t >= n {
                    return Err(bad("index out of range"));
                }
                blocks[bi][(s * m + a) * n + t] = v;
            }
        }
        let [kernel, reward] = blocks;
        if kernel.iter().chain(reward.iter()).any(|v| v.is_nan()) {
            return Err(Error::Parse {
                line: 0,
                detail: "some (s,a,s') entries are missing".into(),
            });
        }
        Self::new(n, m, kernel, reward, discount)
    }
}

fn parse_keyed<T: std::str::FromStr>((ln, l): (usize, &str), key: &str) -> Result<T> {
    let mut it = l.split_whitespace();
    match (it.next(), it.next()) {
        (Some(k), Some(v)) if k == key => v.parse().map_err(|_| Error::Parse {
            line: ln,
            detail: format!("bad value for `{key}`"),
        }),
        _ => Err(Error::Parse {
            line: ln,
            detail: format!("expected `{key} <value>`"),
        }),
    }
}

pub fn is_row_stochastic(p: &DMatrix<f64>, tol: f64) -> bool {
    p.row_iter()
        .all(|r| r.iter().all(|&x| x >= 0.0) && (r.sum() - 1.0).abs() <= tol)
}

fn check_table(mdp: &FiniteMdp, table: &ActionTable) -> Result<()> {
    if table.nrows() != mdp.num_states || table.ncols() != mdp.num_actions {
        return Err(Error::Dimension {
            what: "policy table shape (states x actions)",
            expected: mdp.num_states * mdp.num_actions,
            got: table.nrows() * table.ncols(),
        });
    }
    if !is_row_stochastic(table, 1e-9) {
        return Err(Error::config("policy rows must be probability distributions"));
    }
    Ok(())
}

/// P_π(s,s') = Σ_a π(a|s) P(s,a,s').
pub fn induced_chain(mdp: &FiniteMdp, table: &ActionTable) -> Result<ChainMatrix> {
    check_table(mdp, table)?;
    let n = mdp.num_states;
    let mut p = DMatrix::zeros(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            let pa = table[(s, a)];
            if pa == 0.0 {
                continue;
            }
            for (t, &k) in mdp.kernel_row(s, a).iter().enumerate() {
                p[(s, t)] += pa * k;
            }
        }
    }
    Ok(p)
}

/// R^π(s) = Σ_a π(a|s) Σ_s' P(s,a,s') R(s,a,s').
pub fn expected_reward_vector(mdp: &FiniteMdp, table: &ActionTable) -> Result<ValueFunction> {
    check_table(mdp, table)?;
    Ok(DVector::from_fn(mdp.num_states, |s, _| {
        (0..mdp.num_actions)
            .map(|a| {
                let inner: f64 = mdp
                    .kernel_row(s, a)
                    .iter()
                    .zip(mdp.reward_row(s, a))
                    .map(|(p, r)| p * r)
                    .sum();
                table[(s, a)] * inner
            })
            .sum()
    }))
}

/// Solves (I - γP) V = R.
pub fn value_from_chain(p: &ChainMatrix, r: &ValueFunction, gamma: f64) -> Result<ValueFunction> {
    let n = p.nrows();
    let m = DMatrix::identity(n, n) - p * gamma;
    m.lu().solve(r).ok_or(Error::Singular {
        context: "value solve",
        detail: format!("I - {gamma}P is singular"),
    })
}

pub fn exact_value(mdp: &FiniteMdp, table: &ActionTable) -> Result<ValueFunction> {
    let p = induced_chain(mdp, table)?;
    let r = expected_reward_vector(mdp, table)?;
    value_from_chain(&p, &r, mdp.discount)
}

/// T^π V = R^π + γ P_π V.
pub fn bellman_operator(
    mdp: &FiniteMdp,
    table: &ActionTable,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    let p = induced_chain(mdp, table)?;
    let r = expected_reward_vector(mdp, table)?;
    check_len(v, mdp.num_states, "value function")?;
    Ok(r + p * v * mdp.discount)
}

fn check_len(v: &DVector<f64>, n: usize, what: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension {
            what,
            expected: n,
            got: v.len(),
        });
    }
    Ok(())
}

fn l1_residual(p: &ChainMatrix, nu: &StateDistribution) -> f64 {
    (p.tr_mul(nu) - nu).abs().sum()
}

/// ν with νᵀP = νᵀ obtained by repeated multiplication from the uniform law.
pub fn stationary_by_power_iteration(
    p: &ChainMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<StateDistribution> {
    let n = p.nrows();
    let pt = p.transpose();
    let mut nu = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        pt.mul_to(&nu, &mut next);
        let total = next.sum();
        next /= total;
        residual = (&next - &nu).abs().sum();
        std::mem::swap(&mut nu, &mut next);
        if residual < tol {
            return Ok(nu);
        }
    }
    Err(Error::NotErgodic {
        iterations: max_iters,
        residual,
    })
}

/// Stationary distribution of an ergodic chain.
///
/// A direct solve of the balance equations gives the answer in one
/// factorization; a short run of power iteration then polishes it. If the
/// direct answer is unusable the full power iteration decides.
pub fn stationary_distribution(p: &ChainMatrix) -> Result<StateDistribution> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Dimension {
            what: "square chain matrix",
            expected: n,
            got: p.ncols(),
        });
    }
    let mut m = DMatrix::identity(n, n) - p.transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    if let Some(mut nu) = m.lu().solve(&rhs) {
        let floor = -1e-10;
        if nu.iter().all(|&x| x.is_finite() && x >= floor) {
            nu.apply(|x| *x = x.max(0.0));
            let s = nu.sum();
            nu /= s;
            let pt = p.transpose();
            for _ in 0..8 {
                let next = &pt * &nu;
                let s = next.sum();
                nu = next / s;
            }
            if l1_residual(p, &nu) < 1e-10 {
                return Ok(nu);
            }
        }
    }
    stationary_by_power_iteration(p, POWER_TOL, POWER_MAX_ITERS)
}

/// ‖V‖_ν = sqrt(Σ ν(s) V(s)²).
pub fn weighted_norm(v: &DVector<f64>, nu: &StateDistribution) -> f64 {
    v.iter()
        .zip(nu.iter())
        .map(|(x, w)| w * x * x)
        .sum::<f64>()
        .sqrt()
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn weighted_gram(phi: &FeatureMatrix, nu: &StateDistribution) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if phi.nrows() != nu.len() {
        return Err(Error::Dimension {
            what: "feature rows vs distribution length",
            expected: nu.len(),
            got: phi.nrows(),
        });
    }
    if let Some(state) = nu.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::ZeroWeight { state });
    }
    // ΦᵀD
    let mut ptd = phi.transpose();
    for (j, w) in nu.iter().enumerate() {
        ptd.column_mut(j).scale_mut(*w);
    }
    let gram = &ptd * phi;
    Ok((gram, ptd))
}

/// Coefficients c with Φc = Π V, where Π = Φ(ΦᵀDΦ)⁻¹ΦᵀD.
pub fn projection_coefficients(
    phi: &FeatureMatrix,
    nu: &StateDistribution,
    v: &ValueFunction,
) -> Result<DVector<f64>> {
    check_len(v, phi.nrows(), "value function")?;
    let (gram, ptd) = weighted_gram(phi, nu)?;
    gram.lu().solve(&(ptd * v)).ok_or(Error::Singular {
        context: "projection",
        detail: "weighted Gram matrix is singular; features are not linearly independent".into(),
    })
}

pub fn projection(phi: &FeatureMatrix, nu: &StateDistribution, v: &ValueFunction) -> Result<ValueFunction> {
    Ok(phi * projection_coefficients(phi, nu, v)?)
}

pub fn projection_matrix(phi: &FeatureMatrix, nu: &StateDistribution) -> Result<DMatrix<f64>> {
    let (gram, ptd) = weighted_gram(phi, nu)?;
    let inv = gram.try_inverse().ok_or(Error::Singular {
        context: "projection",
        detail: "weighted Gram matrix is singular".into(),
    })?;
    Ok(phi * inv * ptd)
}

/// T^{(λ)}_{w|w_b} V = (I - γλ P_b)⁻¹ (R^w + γ(1-λ) P_b V).
pub fn td_lambda_operator(
    mdp: &FiniteMdp,
    target: &ActionTable,
    behaviour_chain: &ChainMatrix,
    lambda: f64,
    v: &ValueFunction,
) -> Result<ValueFunction> {
    let n = mdp.num_states;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!("lambda {lambda} outside [0,1]")));
    }
    check_len(v, n, "value function")?;
    let g = mdp.discount;
    let rw = expected_reward_vector(mdp, target)?;
    let rhs = rw + behaviour_chain * v * (g * (1.0 - lambda));
    let m = DMatrix::identity(n, n) - behaviour_chain * (g * lambda);
    m.lu().solve(&rhs).ok_or(Error::Singular {
        context: "TD(lambda) operator",
        detail: "I - γλP is singular".into(),
    })
}

/// Numerical rank of Φ from its singular values.
pub fn feature_rank(phi: &FeatureMatrix) -> usize {
    let svd = phi.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * phi.nrows().max(phi.ncols()) as f64;
    svd.singular_values.iter().filter(|&&s| s > tol).count()
}

/// Uniform distribution over the actions in every state.
pub fn uniform_table(num_states: usize, num_actions: usize) -> ActionTable {
    DMatrix::from_element(num_states, num_actions, 1.0 / num_actions as f64)
}

/// The policy that always takes `action`.
pub fn deterministic_table(num_states: usize, num_actions: usize, action: usize) -> ActionTable {
    DMatrix::from_fn(num_states, num_actions, |_, a| if a == action { 1.0 } else { 0.0 })
}
