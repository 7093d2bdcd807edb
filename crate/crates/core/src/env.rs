//! Desk-scale episodic MDPs: Deep Sea and a stochastic chain.
//!
//! Deep Sea follows the bsuite mechanics: an `N x N` grid, the agent starts
//! in the top-left cell and descends one row per step. Moving right costs
//! `0.01 / N`; taking "right" in the bottom-right column pays the goal
//! reward. Episodes last exactly `N` steps.
//!
//! The stochastic chain is a line of `size` states. The agent starts on the
//! left, the right end is terminal and pays a (possibly noisy) reward, and
//! episodes are capped at `4 * size` steps.
//!
//! Actions are `0` and `1`. By default `1` means right; with
//! `randomize_actions` each column gets its own fixed mapping drawn from the
//! spec seed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng;

pub const NUM_ACTIONS: usize = 2;
pub const DEEP_SEA_MOVE_COST: f64 = 0.01;
pub const GOAL_REWARD: f64 = 1.0;
/// Largest size accepted by [`Env::optimal_value`].
pub const MAX_ORACLE_SIZE: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    DeepSea,
    StochasticChain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    #[default]
    None,
    /// Goal pays 1 with probability `p`, else 0.
    Bernoulli { p: f64 },
    /// Goal pays `1 + sigma * xi`.
    Gaussian { sigma: f64 },
}

impl RewardNoise {
    fn mean(&self) -> f64 {
        match *self {
            RewardNoise::None | RewardNoise::Gaussian { .. } => GOAL_REWARD,
            RewardNoise::Bernoulli { p } => p * GOAL_REWARD,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RewardNoise::None => GOAL_REWARD,
            RewardNoise::Bernoulli { p } => {
                if rng.random::<f64>() < p {
                    GOAL_REWARD
                } else {
                    0.0
                }
            }
            RewardNoise::Gaussian { sigma } => {
                let xi: f64 = StandardNormal.sample(rng);
                GOAL_REWARD + sigma * xi
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub size: usize,
    #[serde(default)]
    pub reward_noise: RewardNoise,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub randomize_actions: bool,
}

impl EnvSpec {
    pub fn deep_sea(size: usize) -> Self {
        Self {
            kind: EnvKind::DeepSea,
            size,
            reward_noise: RewardNoise::None,
            seed: 0,
            randomize_actions: false,
        }
    }

    pub fn chain(size: usize, reward_noise: RewardNoise) -> Self {
        Self {
            kind: EnvKind::StochasticChain,
            size,
            reward_noise,
            seed: 0,
            randomize_actions: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 2 {
            return Err(config_err(format!("environment size must be >= 2, got {}", self.size)));
        }
        match self.reward_noise {
            RewardNoise::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(config_err(format!("bernoulli reward probability {p} outside [0, 1]")))
            }
            RewardNoise::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(config_err(format!("gaussian reward noise {sigma} must be >= 0")))
            }
            _ => Ok(()),
        }
    }
}

/// Position within an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    /// Deep Sea row, or elapsed steps on the chain.
    pub row: usize,
    /// Deep Sea column, or chain position.
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    /// The goal (Deep Sea bottom-right / chain right end) was reached.
    pub reached_goal: bool,
}

#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
    /// Per column: whether action 0 (instead of 1) means "right".
    flipped: Vec<bool>,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        let flipped = if spec.randomize_actions {
            let mut r = rng::stream(spec.seed, rng::streams::ENVIRONMENT);
            (0..spec.size).map(|_| r.random::<bool>()).collect()
        } else {
            vec![false; spec.size]
        };
        Ok(Self { spec, flipped })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn obs_dim(&self) -> usize {
        match self.spec.kind {
            EnvKind::DeepSea => self.spec.size * self.spec.size,
            EnvKind::StochasticChain => self.spec.size,
        }
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    /// Longest possible episode.
    pub fn horizon(&self) -> usize {
        match self.spec.kind {
            EnvKind::DeepSea => self.spec.size,
            EnvKind::StochasticChain => 4 * self.spec.size,
        }
    }

    /// The action that moves right in column `col`.
    pub fn right_action(&self, col: usize) -> usize {
        if self.flipped[col] {
            0
        } else {
            1
        }
    }

    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        let mut obs = vec![0.0; self.obs_dim()];
        match self.spec.kind {
            EnvKind::DeepSea => {
                if state.row < self.spec.size {
                    obs[state.row * self.spec.size + state.col] = 1.0;
                }
            }
            EnvKind::StochasticChain => obs[state.col] = 1.0,
        }
        obs
    }

    /// Initial state, identical for every episode.
    pub fn reset<R: Rng + ?Sized>(&self, _rng: &mut R) -> (EnvState, Vec<f64>) {
        let s = EnvState { row: 0, col: 0 };
        let obs = self.observe(&s);
        (s, obs)
    }

    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &EnvState,
        action: usize,
        rng: &mut R,
    ) -> Result<(EnvState, StepResult)> {
        if action >= NUM_ACTIONS {
            return Err(Error::InvalidInput(format!("action {action} not in {{0, 1}}")));
        }
        let n = self.spec.size;
        let right = action == self.right_action(state.col);
        let mut next = *state;
        let mut reward = 0.0;
        let mut reached_goal = false;
        let done;
        match self.spec.kind {
            EnvKind::DeepSea => {
                if state.row >= n {
                    return Err(Error::InvalidInput("step after episode end".into()));
                }
                if right {
                    if state.col == n - 1 {
                        reward += self.spec.reward_noise.draw(rng);
                        reached_goal = true;
                    }
                    reward -= DEEP_SEA_MOVE_COST / n as f64;
                    next.col = (state.col + 1).min(n - 1);
                } else {
                    next.col = state.col.saturating_sub(1);
                }
                next.row += 1;
                done = next.row == n;
            }
            EnvKind::StochasticChain => {
                if state.col == n - 1 || state.row >= self.horizon() {
                    return Err(Error::InvalidInput("step after episode end".into()));
                }
                next.col = if right { state.col + 1 } else { state.col.saturating_sub(1) };
                next.row += 1;
                if next.col == n - 1 {
                    reward = self.spec.reward_noise.draw(rng);
                    reached_goal = true;
                    done = true;
                } else {
                    done = next.row >= self.horizon();
                }
            }
        }
        let obs = self.observe(&next);
        Ok((
            next,
            StepResult {
                obs,
                reward,
                done,
                reached_goal,
            },
        ))
    }

    /// Optimal expected discounted return from the initial state, by
    /// backward value iteration over the (finite-horizon) state space.
    pub fn optimal_value(&self, gamma: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidInput(format!("discount {gamma} outside [0, 1]")));
        }
        let n = self.spec.size;
        if n > MAX_ORACLE_SIZE {
            return Err(Error::InvalidInput(format!(
                "optimal_value supports sizes up to {MAX_ORACLE_SIZE}, got {n}"
            )));
        }
        let goal = self.spec.reward_noise.mean();
        match self.spec.kind {
            EnvKind::DeepSea => {
                let cost = DEEP_SEA_MOVE_COST / n as f64;
                // value[col] for the row below the current one; zero past the last row
                let mut below = vec![0.0; n];
                for _row in (0..n).rev() {
                    let mut here = vec![0.0; n];
                    for (col, h) in here.iter_mut().enumerate() {
                        let left = gamma * below[col.saturating_sub(1)];
                        let bonus = if col == n - 1 { goal } else { 0.0 };
                        let right = bonus - cost + gamma * below[(col + 1).min(n - 1)];
                        *h = left.max(right);
                    }
                    below = here;
                }
                Ok(below[0])
            }
            EnvKind::StochasticChain => {
                let horizon = self.horizon();
                let mut next = vec![0.0; n];
                for _t in (0..horizon).rev() {
                    let mut here = vec![0.0; n];
                    for (pos, h) in here.iter_mut().enumerate().take(n - 1) {
                        let q = |to: usize| {
                            if to == n - 1 {
                                goal
                            } else {
                                gamma * next[to]
                            }
                        };
                        *h = q(pos.saturating_sub(1)).max(q(pos + 1));
                    }
                    next = here;
                }
                Ok(next[0])
            }
        }
    }
}

/// True iff the Deep Sea goal can be reached by this open-loop action
/// sequence (used by tests and diagnostics).
pub fn is_solving_sequence(env: &Env, actions: &[usize]) -> bool {
    let mut r = rng::stream(0, 0);
    let (mut s, _) = env.reset(&mut r);
    for &a in actions {
        match env.step(&s, a, &mut r) {
            Ok((next, res)) => {
                if res.reached_goal {
                    return true;
                }
                if res.done {
                    return false;
                }
                s = next;
            }
            Err(_) => return false,
        }
    }
    false
}
