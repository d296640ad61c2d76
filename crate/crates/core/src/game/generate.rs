//! Seeded generators for tabular test games.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{GameConfig, GeneratorMeta, PlayerChain, RewardOracle, DEFAULT_ENUMERATION_CAP};

/// Every generated transition row keeps this much mass on each entry, so
/// induced chains are ergodic under every policy.
pub const ERGODICITY_FLOOR: f64 = 0.01;

/// Samples a point of the probability simplex with all coordinates at least
/// `floor`, Dirichlet(1,..,1)-shaped above the floor.
pub(crate) fn floored_simplex_row<R: Rng + ?Sized>(len: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    debug_assert!((len as f64) * floor < 1.0);
    let mut gaps: Vec<f64> = (0..len)
        .map(|_| -(1.0 - rng.random::<f64>()).ln())
        .collect();
    let total: f64 = gaps.iter().sum();
    let free = 1.0 - floor * len as f64;
    for g in &mut gaps {
        *g = floor + free * (*g / total);
    }
    // Absorb rounding into the largest coordinate so rows sum exactly to 1.
    let sum: f64 = gaps.iter().sum();
    let imax = gaps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    gaps[imax] += 1.0 - sum;
    gaps
}

fn random_chain<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Result<PlayerChain> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::invalid("state and action sizes must be at least 1"));
    }
    if ERGODICITY_FLOOR * n_states as f64 >= 1.0 {
        return Err(Error::invalid(format!(
            "cannot floor {n_states}-state rows at {ERGODICITY_FLOOR}"
        )));
    }
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(floored_simplex_row(n_states, ERGODICITY_FLOOR, rng));
    }
    PlayerChain::new(n_states, n_actions, transition)
}

fn random_tables<R: Rng + ?Sized>(players: &[PlayerChain], rng: &mut R) -> Vec<Vec<f64>> {
    let joint: usize = players.iter().map(|p| p.dim()).product();
    (0..players.len())
        .map(|_| (0..joint).map(|_| rng.random::<f64>()).collect())
        .collect()
}

/// A reproducible tabular game with floored-Dirichlet transition rows and
/// uniform `[0, 1]` rewards. Every induced chain is ergodic under every
/// policy because all transition entries are at least [`ERGODICITY_FLOOR`].
pub fn random_game(
    state_sizes: &[usize],
    action_sizes: &[usize],
    seed: u64,
) -> Result<GameConfig> {
    if state_sizes.is_empty() || state_sizes.len() != action_sizes.len() {
        return Err(Error::invalid(
            "state and action size lists must be nonempty and of equal length",
        ));
    }
    let joint: u128 = state_sizes
        .iter()
        .zip(action_sizes)
        .map(|(&s, &a)| (s * a) as u128)
        .product();
    if joint > DEFAULT_ENUMERATION_CAP {
        return Err(Error::EnumerationTooLarge {
            size: joint,
            cap: DEFAULT_ENUMERATION_CAP,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let players = state_sizes
        .iter()
        .zip(action_sizes)
        .map(|(&s, &a)| random_chain(s, a, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let tables = random_tables(&players, &mut rng);
    GameConfig::new(
        players,
        RewardOracle::Tabular { tables },
        seed,
        GeneratorMeta::Random {
            state_sizes: state_sizes.to_vec(),
            action_sizes: action_sizes.to_vec(),
            seed,
        },
    )
}

/// A reproducible two-player constant-sum tabular game: `r_2 = 1 - r_1`
/// everywhere, which is zero-sum after shifting while keeping rewards in
/// `[0, 1]`.
pub fn zero_sum_two_player(
    state_sizes: [usize; 2],
    action_sizes: [usize; 2],
    seed: u64,
) -> Result<GameConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let players = vec![
        random_chain(state_sizes[0], action_sizes[0], &mut rng)?,
        random_chain(state_sizes[1], action_sizes[1], &mut rng)?,
    ];
    let joint: usize = players.iter().map(|p| p.dim()).product();
    let r1: Vec<f64> = (0..joint).map(|_| rng.random::<f64>()).collect();
    let r2: Vec<f64> = r1.iter().map(|&r| 1.0 - r).collect();
    GameConfig::new(
        players,
        RewardOracle::Tabular { tables: vec![r1, r2] },
        seed,
        GeneratorMeta::ZeroSumTwoPlayer {
            state_sizes,
            action_sizes,
            seed,
        },
    )
}
