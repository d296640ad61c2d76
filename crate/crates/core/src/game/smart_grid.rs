//! The storage/consumption energy-market benchmark game.
//!
//! Each player owns a battery of capacity `C`. A day's state is the stored
//! energy, the action is the energy consumed. Unmet consumption is bought
//! from a utility whose unit price grows linearly with aggregate demand, and
//! leftover storage is topped up by a uniformly random harvest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{GameConfig, GeneratorMeta, PlayerChain, RewardOracle};

/// Parameters of the market game.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SmartGridSpec {
    /// Number of players.
    pub n_players: usize,
    /// Storage capacity; states and actions are `{0..=capacity}`.
    pub capacity: usize,
    /// Per-player harvest bound: the daily harvest is uniform on
    /// `{0..=harvest_bounds[i]-1}`.
    pub harvest_bounds: Vec<usize>,
    /// Price slope: unit price is `price_slope * total_demand`.
    pub price_slope: f64,
    /// Consumption-utility exponent: `u(a) = a^utility_exponent`.
    pub utility_exponent: f64,
}

impl SmartGridSpec {
    fn validate(&self) -> Result<()> {
        if self.n_players == 0 {
            return Err(Error::invalid("smart grid needs at least one player"));
        }
        if self.capacity < 1 {
            return Err(Error::invalid("storage capacity must be at least 1"));
        }
        if self.harvest_bounds.len() != self.n_players {
            return Err(Error::invalid("one harvest bound per player required"));
        }
        if self.harvest_bounds.iter().any(|&g| g < 1) {
            return Err(Error::invalid("harvest bounds must be at least 1"));
        }
        if self.price_slope < 0.0 {
            return Err(Error::invalid("price slope must be nonnegative"));
        }
        if self.utility_exponent <= 0.0 {
            return Err(Error::invalid("utility exponent must be positive"));
        }
        Ok(())
    }
}

/// Distribution of tomorrow's storage after consuming `a` out of `s` today:
/// `s' = min(capacity, g + max(s - a, 0))` with `g` uniform on
/// `{0..=g_bound-1}`; harvest values that saturate the battery accumulate on
/// the capacity state.
pub fn smart_grid_transition(capacity: usize, g_bound: usize, s: usize, a: usize) -> Vec<f64> {
    debug_assert!(s <= capacity && a <= capacity && g_bound >= 1);
    let mut row = vec![0.0; capacity + 1];
    let leftover = s.saturating_sub(a);
    let p = 1.0 / g_bound as f64;
    for g in 0..g_bound {
        let next = (g + leftover).min(capacity);
        row[next] += p;
    }
    row
}

/// Reward of `player` for one day: consumption utility minus the cost of
/// energy bought at the demand-driven price, clamped below at zero, then
/// normalized by the maximum utility `capacity^utility_exponent` so the
/// result lies in `[0, 1]`.
pub fn smart_grid_reward(
    spec: &SmartGridSpec,
    joint_state: &[usize],
    joint_action: &[usize],
    player: usize,
) -> f64 {
    let demand: f64 = joint_state
        .iter()
        .zip(joint_action)
        .map(|(&s, &a)| a.saturating_sub(s) as f64)
        .sum();
    let price = spec.price_slope * demand;
    let own_demand = joint_action[player].saturating_sub(joint_state[player]) as f64;
    let utility = (joint_action[player] as f64).powf(spec.utility_exponent);
    let raw = utility - price * own_demand;
    raw.max(0.0) / (spec.capacity as f64).powf(spec.utility_exponent)
}

/// Builds the full market game: `S_i = A_i = {0..=capacity}` per player,
/// transitions from [`smart_grid_transition`], rewards evaluated on demand
/// by [`smart_grid_reward`].
pub fn smart_grid_game(
    n_players: usize,
    capacity: usize,
    harvest_bounds: Vec<usize>,
    price_slope: f64,
    utility_exponent: f64,
) -> Result<GameConfig> {
    let spec = SmartGridSpec {
        n_players,
        capacity,
        harvest_bounds,
        price_slope,
        utility_exponent,
    };
    spec.validate()?;
    let n = capacity + 1;
    let players = (0..n_players)
        .map(|i| {
            let mut transition = Vec::with_capacity(n * n * n);
            for s in 0..n {
                for a in 0..n {
                    transition.extend(smart_grid_transition(capacity, spec.harvest_bounds[i], s, a));
                }
            }
            PlayerChain::new(n, n, transition)
        })
        .collect::<Result<Vec<_>>>()?;
    GameConfig::new(
        players,
        RewardOracle::SmartGrid(spec.clone()),
        0,
        GeneratorMeta::SmartGrid(spec),
    )
}
