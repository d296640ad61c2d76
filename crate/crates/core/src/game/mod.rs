//! Stochastic games with independent per-player chains.
//!
//! A game couples `n` players through a joint reward oracle while each
//! player's state evolves on its own finite chain, driven only by that
//! player's state and action. This module holds the game representation,
//! the simulation step, and the benchmark game generators.

pub(crate) mod generate;
mod smart_grid;

pub use generate::{random_game, zero_sum_two_player};
pub use smart_grid::{smart_grid_game, smart_grid_reward, smart_grid_transition, SmartGridSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{sample_index, StreamBank};

/// Row-sum tolerance for transition kernels.
pub const TRANSITION_ROW_TOL: f64 = 1e-12;
/// Row-sum tolerance for policy rows.
pub const POLICY_ROW_TOL: f64 = 1e-9;
/// Default cap on joint enumeration size for exact oracles.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// One player's finite chain: state set, action set, and transition tensor.
///
/// The transition tensor is stored row-major as `P[(s, a), s']` with the
/// `(s, a)` rows ordered by `s * n_actions + a`; every row is a probability
/// distribution over next states.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlayerChain {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
}

impl PlayerChain {
    /// Builds a chain, validating that every `(s, a)` row of `transition`
    /// is a probability distribution (length `n_states`, nonnegative,
    /// summing to 1 within `1e-12`).
    pub fn new(n_states: usize, n_actions: usize, transition: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("state and action sets must be nonempty"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::invalid(format!(
                "transition tensor has length {}, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        let chain = PlayerChain {
            n_states,
            n_actions,
            transition,
        };
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = chain.transition_row(s, a);
                let sum: f64 = row.iter().sum();
                let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
                if min < 0.0 || (sum - 1.0).abs() > TRANSITION_ROW_TOL {
                    return Err(Error::NonStochasticRow {
                        row: s * n_actions + a,
                        sum,
                        min,
                    });
                }
            }
        }
        Ok(chain)
    }

    /// Chain whose state never changes, for any action.
    pub fn identity(n_states: usize, n_actions: usize) -> Self {
        let mut transition = vec![0.0; n_states * n_actions * n_states];
        for s in 0..n_states {
            for a in 0..n_actions {
                transition[(s * n_actions + a) * n_states + s] = 1.0;
            }
        }
        PlayerChain {
            n_states,
            n_actions,
            transition,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of `(s, a)` pairs; the dimension of occupation vectors.
    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// The distribution over next states after playing `a` in `s`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// Probability of moving to `next` after playing `a` in `s`.
    pub fn prob(&self, next: usize, s: usize, a: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + next]
    }

    /// The kernel `P^pi(s'|s) = sum_a P(s'|s,a) pi(a|s)` induced by a policy.
    pub fn induced_kernel(&self, policy: &Policy) -> Result<Vec<f64>> {
        if policy.n_states() != self.n_states || policy.n_actions() != self.n_actions {
            return Err(Error::invalid("policy shape does not match chain"));
        }
        let mut kernel = vec![0.0; self.n_states * self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                for (next, &q) in self.transition_row(s, a).iter().enumerate() {
                    kernel[s * self.n_states + next] += p * q;
                }
            }
        }
        Ok(kernel)
    }
}

/// A stationary policy for one player: a distribution over actions per state,
/// stored row-major as `pi[s * n_actions + a]`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "policy has length {}, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        let policy = Policy {
            n_states,
            n_actions,
            probs,
        };
        policy.validate()?;
        Ok(policy)
    }

    /// Uniform policy over actions in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub(crate) fn from_rows_unchecked(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Self {
        Policy {
            n_states,
            n_actions,
            probs,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    /// Smallest action probability over all states.
    pub fn min_prob(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            let row = self.row(s);
            let sum: f64 = row.iter().sum();
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            if min < 0.0 || (sum - 1.0).abs() > POLICY_ROW_TOL {
                return Err(Error::NonStochasticRow { row: s, sum, min });
            }
        }
        Ok(())
    }
}

/// Draws an action from `policy`'s row at `state` using the given stream.
///
/// The row must sum to 1 within `1e-9`; a zero (or otherwise non-normalized)
/// row is an input error.
pub fn sample_action<R: rand::Rng + ?Sized>(
    policy: &Policy,
    state: usize,
    rng: &mut R,
) -> Result<usize> {
    if state >= policy.n_states() {
        return Err(Error::invalid(format!(
            "state index {state} out of range for {} states",
            policy.n_states()
        )));
    }
    let row = policy.row(state);
    let sum: f64 = row.iter().sum();
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 0.0 || (sum - 1.0).abs() > POLICY_ROW_TOL {
        return Err(Error::NonStochasticRow {
            row: state,
            sum,
            min,
        });
    }
    Ok(sample_index(row, rng))
}

/// How rewards are evaluated: a full joint tensor or a procedural rule.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum RewardOracle {
    /// One table per player over the joint `(s, a)` space, indexed by
    /// `joint_state_index * n_joint_actions + joint_action_index`.
    Tabular { tables: Vec<Vec<f64>> },
    /// The storage/consumption market game evaluated on demand.
    SmartGrid(SmartGridSpec),
}

impl RewardOracle {
    pub fn is_tabular(&self) -> bool {
        matches!(self, RewardOracle::Tabular { .. })
    }
}

/// How a game was generated, kept for serialization and config hashing.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub enum GeneratorMeta {
    SmartGrid(SmartGridSpec),
    Random {
        state_sizes: Vec<usize>,
        action_sizes: Vec<usize>,
        seed: u64,
    },
    ZeroSumTwoPlayer {
        state_sizes: [usize; 2],
        action_sizes: [usize; 2],
        seed: u64,
    },
    Custom,
}

/// A complete game: per-player chains, a joint reward oracle, a master seed,
/// and the enumeration cap guarding exact oracles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameConfig {
    players: Vec<PlayerChain>,
    rewards: RewardOracle,
    seed: u64,
    enumeration_cap: u128,
    meta: GeneratorMeta,
}

impl GameConfig {
    pub fn new(
        players: Vec<PlayerChain>,
        rewards: RewardOracle,
        seed: u64,
        meta: GeneratorMeta,
    ) -> Result<Self> {
        if players.is_empty() {
            return Err(Error::invalid("a game needs at least one player"));
        }
        if let RewardOracle::Tabular { tables } = &rewards {
            if tables.len() != players.len() {
                return Err(Error::invalid("one reward table per player required"));
            }
            let expected: u128 = players.iter().map(|p| p.dim() as u128).product();
            for (i, table) in tables.iter().enumerate() {
                if table.len() as u128 != expected {
                    return Err(Error::invalid(format!(
                        "reward table for player {i} has length {}, expected {expected}",
                        table.len()
                    )));
                }
                if table.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
                    return Err(Error::invalid(format!(
                        "reward table for player {i} leaves [0, 1]"
                    )));
                }
            }
        }
        Ok(GameConfig {
            players,
            rewards,
            seed,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
            meta,
        })
    }

    pub fn with_enumeration_cap(mut self, cap: u128) -> Self {
        self.enumeration_cap = cap;
        self
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn player(&self, i: usize) -> &PlayerChain {
        &self.players[i]
    }

    pub fn players(&self) -> &[PlayerChain] {
        &self.players
    }

    pub fn rewards(&self) -> &RewardOracle {
        &self.rewards
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn enumeration_cap(&self) -> u128 {
        self.enumeration_cap
    }

    pub fn meta(&self) -> &GeneratorMeta {
        &self.meta
    }

    /// Product of all `|S_i||A_i|`, the joint enumeration size.
    pub fn joint_size(&self) -> u128 {
        self.players.iter().map(|p| p.dim() as u128).product()
    }

    /// Reward for `player` at the joint state/action pair, in `[0, 1]`.
    pub fn reward(&self, joint_state: &[usize], joint_action: &[usize], player: usize) -> f64 {
        match &self.rewards {
            RewardOracle::Tabular { tables } => {
                let s = self.joint_state_index(joint_state);
                let a = self.joint_action_index(joint_action);
                tables[player][s * self.joint_action_space() + a]
            }
            RewardOracle::SmartGrid(spec) => {
                smart_grid_reward(spec, joint_state, joint_action, player)
            }
        }
    }

    /// Advances every player's state by one step. Player `i`'s next state is
    /// drawn from `P_i(.|s_i, a_i)` using only player `i`'s stream, so the
    /// players' realized transitions are independent.
    pub fn step(
        &self,
        joint_state: &[usize],
        joint_action: &[usize],
        streams: &mut StreamBank,
    ) -> Result<Vec<usize>> {
        self.check_indices(joint_state, joint_action)?;
        let mut next = Vec::with_capacity(self.players.len());
        for (i, chain) in self.players.iter().enumerate() {
            let row = chain.transition_row(joint_state[i], joint_action[i]);
            next.push(sample_index(row, streams.player(i)));
        }
        Ok(next)
    }

    pub(crate) fn check_indices(&self, joint_state: &[usize], joint_action: &[usize]) -> Result<()> {
        if joint_state.len() != self.players.len() || joint_action.len() != self.players.len() {
            return Err(Error::invalid("joint index vectors must have one entry per player"));
        }
        for (i, chain) in self.players.iter().enumerate() {
            if joint_state[i] >= chain.n_states() {
                return Err(Error::invalid(format!(
                    "state index {} out of range for player {i}",
                    joint_state[i]
                )));
            }
            if joint_action[i] >= chain.n_actions() {
                return Err(Error::invalid(format!(
                    "action index {} out of range for player {i}",
                    joint_action[i]
                )));
            }
        }
        Ok(())
    }

    pub fn joint_state_space(&self) -> usize {
        self.players.iter().map(|p| p.n_states()).product()
    }

    pub fn joint_action_space(&self) -> usize {
        self.players.iter().map(|p| p.n_actions()).product()
    }

    /// Mixed-radix index of a joint state (player 0 most significant).
    pub fn joint_state_index(&self, joint_state: &[usize]) -> usize {
        let mut idx = 0;
        for (i, chain) in self.players.iter().enumerate() {
            idx = idx * chain.n_states() + joint_state[i];
        }
        idx
    }

    /// Mixed-radix index of a joint action (player 0 most significant).
    pub fn joint_action_index(&self, joint_action: &[usize]) -> usize {
        let mut idx = 0;
        for (i, chain) in self.players.iter().enumerate() {
            idx = idx * chain.n_actions() + joint_action[i];
        }
        idx
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Iterates over all tuples of a mixed-radix space, e.g. all joint states.
pub struct MixedRadix {
    sizes: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl MixedRadix {
    pub fn new(sizes: Vec<usize>) -> Self {
        let done = sizes.iter().any(|&s| s == 0);
        let current = vec![0; sizes.len()];
        MixedRadix {
            sizes,
            current,
            done,
        }
    }
}

impl Iterator for MixedRadix {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let item = self.current.clone();
        // Increment from the least significant (last) digit.
        let mut i = self.sizes.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.current[i] += 1;
            if self.current[i] < self.sizes[i] {
                break;
            }
            self.current[i] = 0;
        }
        Some(item)
    }
}
