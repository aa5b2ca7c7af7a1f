//! Turns an environment description into a simulator, prediction features
//! and a policy family.

use offpolicy_ce::env::{
    build_chain_walk_with, build_random_mdp, build_self_drive, chain_walk_reward_states, self_drive_features,
    CartPole, Environment, LinkPendulum, RandomMdpConfig, StartState, TabularEnv,
};
use offpolicy_ce::features::{
    feature_matrix, ActionBlocks, ActionFeatureMap, CyclicIndicator, FeatureMap, QuadraticFeatures, RbfSpec,
    StateTimesAction, TabularFeatures,
};
use offpolicy_ce::lstd::Performance;
use offpolicy_ce::mdp::{ActionTable, FeatureMatrix, FiniteMdp};
use offpolicy_ce::policy::{GaussianFamily, PolicyFamily, SoftmaxFamily};
use offpolicy_ce::trajectory::Field;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{EnvSpec, PerformanceSpec};
use crate::CliError;

pub struct Problem<E, F, P> {
    pub env: E,
    pub features: F,
    pub family: P,
    pub performance: Performance,
}

/// Code that runs on any assembled problem.
pub trait ProblemVisitor {
    type Output;

    fn visit<E, F, P>(self, problem: Problem<E, F, P>) -> Result<Self::Output, CliError>
    where
        E: Environment + Sync,
        E::State: Field + Send + Sync,
        E::Action: Field + Send + Sync,
        F: FeatureMap<E::State> + Sync,
        P: PolicyFamily<E::State, E::Action> + Clone + Sync;
}

fn check_start(start: &Option<Vec<f64>>, dim: usize) -> Result<Option<StartState>, CliError> {
    match start {
        None => Ok(None),
        Some(s) if s.len() == dim => Ok(Some(StartState::Fixed(s.clone()))),
        Some(s) => Err(CliError::Config(format!("start state has {} entries, expected {dim}", s.len()))),
    }
}

fn anchor(perf: &PerformanceSpec, state_dim: usize) -> Result<Option<Vec<f64>>, CliError> {
    match perf {
        PerformanceSpec::AnchorState { state, .. } => {
            if state.len() != state_dim {
                return Err(CliError::Config(format!(
                    "anchor state has {} entries, expected {state_dim}",
                    state.len()
                )));
            }
            Ok(Some(QuadraticFeatures { state_dim }.eval(state).as_slice().to_vec()))
        }
        _ => Ok(None),
    }
}

pub fn chain_walk_mdp(num_states: usize, discount: f64) -> Result<FiniteMdp, CliError> {
    Ok(build_chain_walk_with(num_states, &chain_walk_reward_states(num_states), discount)?)
}

pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    instance_seed: u64,
    discount: f64,
) -> Result<FiniteMdp, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(instance_seed);
    let cfg = RandomMdpConfig {
        discount,
        ..RandomMdpConfig::sample(num_states, num_actions, &mut rng)
    };
    Ok(build_random_mdp(&cfg)?)
}

pub fn build<V: ProblemVisitor>(env: &EnvSpec, perf: &PerformanceSpec, visitor: V) -> Result<V::Output, CliError> {
    match env {
        EnvSpec::ChainWalk {
            num_states,
            start,
            discount,
            rbf_count,
            temperature,
        } => {
            let mut sim = TabularEnv::new(chain_walk_mdp(*num_states, *discount)?);
            sim.start = *start;
            let rbf = RbfSpec::uniform(*num_states, *rbf_count);
            let family = SoftmaxFamily {
                features: ActionBlocks {
                    base: rbf.clone(),
                    num_actions: 2,
                },
                temperature: *temperature,
            };
            visitor.visit(Problem {
                env: sim,
                features: rbf,
                family,
                performance: perf.to_performance(None)?,
            })
        }
        EnvSpec::RandomMdp {
            num_states,
            num_actions,
            instance_seed,
            discount,
            rbf_count,
            policy_dim,
            temperature,
        } => {
            let sim = TabularEnv::new(random_mdp(*num_states, *num_actions, *instance_seed, *discount)?);
            let family = SoftmaxFamily {
                features: CyclicIndicator {
                    dim: *policy_dim,
                    num_actions: *num_actions,
                },
                temperature: *temperature,
            };
            visitor.visit(Problem {
                env: sim,
                features: RbfSpec::uniform(*num_states, *rbf_count),
                family,
                performance: perf.to_performance(None)?,
            })
        }
        EnvSpec::SelfDrive {
            terminal,
            discount,
            reward,
            temperature,
        } => {
            let sim = TabularEnv::new(build_self_drive(*terminal, *discount, *reward)?);
            let family = SoftmaxFamily {
                features: StateTimesAction { num_actions: 2 },
                temperature: *temperature,
            };
            visitor.visit(Problem {
                env: sim,
                features: TabularFeatures(self_drive_features()),
                family,
                performance: perf.to_performance(None)?,
            })
        }
        EnvSpec::Cartpole {
            params,
            start,
            scale,
            floor,
        } => {
            let mut sim = CartPole::new(params.clone());
            if let Some(s) = check_start(start, 4)? {
                sim.start = s;
            }
            visitor.visit(Problem {
                env: sim,
                features: QuadraticFeatures { state_dim: 4 },
                family: GaussianFamily {
                    state_dim: 4,
                    action_dim: 1,
                    scale: *scale,
                    floor: *floor,
                },
                performance: perf.to_performance(anchor(perf, 4)?)?,
            })
        }
        EnvSpec::Pendulum {
            params,
            start,
            scale,
            floor,
        } => {
            let mut sim = LinkPendulum::new(params.clone())?;
            let d = 2 * sim.links();
            if let Some(s) = check_start(start, d)? {
                sim.start = s;
            }
            let links = sim.links();
            visitor.visit(Problem {
                env: sim,
                features: QuadraticFeatures { state_dim: d },
                family: GaussianFamily {
                    state_dim: d,
                    action_dim: links,
                    scale: *scale,
                    floor: *floor,
                },
                performance: perf.to_performance(anchor(perf, d)?)?,
            })
        }
    }
}

/// Exact-oracle ingredients of a tabular environment.
pub struct TabularParts {
    pub mdp: FiniteMdp,
    pub phi: FeatureMatrix,
    tables: Box<dyn Fn(&[f64]) -> Result<ActionTable, CliError>>,
}

impl TabularParts {
    pub fn table(&self, w: &[f64]) -> Result<ActionTable, CliError> {
        (self.tables)(w)
    }
}

fn softmax_tables<F>(family: SoftmaxFamily<F>, n: usize) -> Box<dyn Fn(&[f64]) -> Result<ActionTable, CliError>>
where
    F: ActionFeatureMap<usize> + Clone + 'static,
{
    Box::new(move |w| {
        if w.len() != family.features.dim() {
            return Err(CliError::Config(format!(
                "policy vector has {} entries, expected {}",
                w.len(),
                family.features.dim()
            )));
        }
        Ok(PolicyFamily::<usize, usize>::policy(&family, w)?.table(n))
    })
}

pub fn tabular_parts(env: &EnvSpec) -> Result<TabularParts, CliError> {
    match env {
        EnvSpec::ChainWalk {
            num_states,
            discount,
            rbf_count,
            temperature,
            ..
        } => {
            let rbf = RbfSpec::uniform(*num_states, *rbf_count);
            Ok(TabularParts {
                mdp: chain_walk_mdp(*num_states, *discount)?,
                phi: feature_matrix(&rbf, *num_states),
                tables: softmax_tables(
                    SoftmaxFamily {
                        features: ActionBlocks { base: rbf, num_actions: 2 },
                        temperature: *temperature,
                    },
                    *num_states,
                ),
            })
        }
        EnvSpec::RandomMdp {
            num_states,
            num_actions,
            instance_seed,
            discount,
            rbf_count,
            policy_dim,
            temperature,
        } => Ok(TabularParts {
            mdp: random_mdp(*num_states, *num_actions, *instance_seed, *discount)?,
            phi: feature_matrix(&RbfSpec::uniform(*num_states, *rbf_count), *num_states),
            tables: softmax_tables(
                SoftmaxFamily {
                    features: CyclicIndicator {
                        dim: *policy_dim,
                        num_actions: *num_actions,
                    },
                    temperature: *temperature,
                },
                *num_states,
            ),
        }),
        EnvSpec::SelfDrive {
            terminal,
            discount,
            reward,
            temperature,
        } => Ok(TabularParts {
            mdp: build_self_drive(*terminal, *discount, *reward)?,
            phi: self_drive_features(),
            tables: softmax_tables(
                SoftmaxFamily {
                    features: StateTimesAction { num_actions: 2 },
                    temperature: *temperature,
                },
                4,
            ),
        }),
        _ => Err(CliError::Config("exact bounds need a tabular environment".into())),
    }
}
