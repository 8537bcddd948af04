//! Non-learning comparators: uniform random power selection and per-step
//! exhaustive search over the whole action space.

use crate::env::{EnvError, Policy, PowerEnv, StateVector};
use crate::geometry::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// What the exhaustive search maximises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Total rate over all UEs.
    SumRate,
    /// 0.25 lower quantile of per-UE rates.
    Q1,
}

impl Objective {
    pub fn score(self, eval: &crate::env::PowerEval) -> f64 {
        match self {
            Objective::SumRate => eval.sum_rate_mbps,
            Objective::Q1 => eval.q1_mbps,
        }
    }
}

/// Uniformly random action.
pub fn random_action(n_actions: usize, rng: &mut impl Rng) -> usize {
    assert!(n_actions > 0);
    rng.random_range(0..n_actions)
}

/// Picks the argmax action for the step the environment is about to take:
/// UEs move first, then every candidate power vector is scored against
/// those positions with full re-attachment. Ties break to the lowest index.
/// Operates on a snapshot; the live environment is untouched.
pub fn exhaustive_action(env: &PowerEnv, objective: Objective) -> Result<usize, EnvError> {
    exhaustive_action_at(env, &env.next_positions(), objective)
}

/// Same as [`exhaustive_action`] against explicit UE positions.
pub fn exhaustive_action_at(
    env: &PowerEnv,
    positions: &[Point3],
    objective: Objective,
) -> Result<usize, EnvError> {
    let mut best_action = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (a, combo) in env.action_space().combos().iter().enumerate() {
        let eval = env.evaluate_powers(positions, combo)?;
        let score = objective.score(&eval);
        if score > best_score {
            best_score = score;
            best_action = a;
        }
    }
    Ok(best_action)
}

/// Seeded uniform-random policy.
pub struct RandomPolicy {
    rng: ChaCha12Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> RandomPolicy {
        RandomPolicy {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for RandomPolicy {
    fn select(&mut self, env: &PowerEnv, _state: &StateVector) -> Result<usize, EnvError> {
        Ok(random_action(env.n_actions(), &mut self.rng))
    }

    fn name(&self) -> &str {
        "random"
    }
}

/// Per-step exhaustive search policy.
pub struct ExhaustivePolicy {
    objective: Objective,
}

impl ExhaustivePolicy {
    pub fn new(objective: Objective) -> ExhaustivePolicy {
        ExhaustivePolicy { objective }
    }
}

impl Policy for ExhaustivePolicy {
    fn select(&mut self, env: &PowerEnv, _state: &StateVector) -> Result<usize, EnvError> {
        exhaustive_action(env, self.objective)
    }

    fn name(&self) -> &str {
        match self.objective {
            Objective::SumRate => "exhaustive",
            Objective::Q1 => "exhaustive_q1",
        }
    }
}
