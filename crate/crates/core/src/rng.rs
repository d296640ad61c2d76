//! Deterministic random streams.
//!
//! All randomness in a simulation flows through a [`StreamBank`]: one
//! counter-based stream per player plus one for game-level ("nature")
//! sampling, all split from a single master seed. Because each player's
//! draws come from its own stream, the realized transitions of different
//! players are independent and a run is reproducible regardless of how
//! work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids: 0 is reserved for nature, players start at 1.
const NATURE_STREAM: u64 = 0;

/// A bank of independent deterministic streams split from one master seed.
#[derive(Debug, Clone)]
pub struct StreamBank {
    master_seed: u64,
    players: Vec<ChaCha8Rng>,
    nature: ChaCha8Rng,
}

impl StreamBank {
    pub fn new(master_seed: u64, n_players: usize) -> Self {
        let mk = |stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(stream);
            rng
        };
        let players = (0..n_players).map(|i| mk(i as u64 + 1)).collect();
        StreamBank {
            master_seed,
            players,
            nature: mk(NATURE_STREAM),
        }
    }

    pub fn n_players(&self) -> usize {
        self.players.len()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn player(&mut self, i: usize) -> &mut ChaCha8Rng {
        &mut self.players[i]
    }

    pub fn nature(&mut self) -> &mut ChaCha8Rng {
        &mut self.nature
    }

    /// Word positions of every stream (nature first), for checkpointing.
    pub fn positions(&self) -> Vec<u128> {
        std::iter::once(self.nature.get_word_pos())
            .chain(self.players.iter().map(|r| r.get_word_pos()))
            .collect()
    }

    /// Restores stream positions captured by [`StreamBank::positions`].
    pub fn restore_positions(&mut self, positions: &[u128]) -> crate::Result<()> {
        if positions.len() != self.players.len() + 1 {
            return Err(crate::Error::Checkpoint(format!(
                "expected {} stream positions, found {}",
                self.players.len() + 1,
                positions.len()
            )));
        }
        self.nature.set_word_pos(positions[0]);
        for (rng, &pos) in self.players.iter_mut().zip(&positions[1..]) {
            rng.set_word_pos(pos);
        }
        Ok(())
    }
}

/// Draws an index from an unnormalized nonnegative weight vector by inverse
/// CDF on a single uniform variate. The caller is responsible for weights
/// summing to ~1 when exact probabilities matter.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    debug_assert!(!weights.is_empty());
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc slightly below 1; fall back to the last
    // positively weighted index.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = StreamBank::new(42, 3);
        let mut b = StreamBank::new(42, 3);
        for i in 0..3 {
            let xa: Vec<f64> = (0..16).map(|_| a.player(i).random()).collect();
            let xb: Vec<f64> = (0..16).map(|_| b.player(i).random()).collect();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn streams_do_not_interleave() {
        // Drawing from player 0 must not disturb player 1's sequence.
        let mut a = StreamBank::new(7, 2);
        let mut b = StreamBank::new(7, 2);
        let _: f64 = a.player(0).random();
        let _: f64 = a.player(0).random();
        let xa: f64 = a.player(1).random();
        let xb: f64 = b.player(1).random();
        assert_eq!(xa, xb);
    }

    #[test]
    fn positions_roundtrip() {
        let mut a = StreamBank::new(9, 2);
        let _: f64 = a.player(0).random();
        let _: f64 = a.player(1).random();
        let _: f64 = a.nature().random();
        let pos = a.positions();
        let next: f64 = a.player(1).random();

        let mut b = StreamBank::new(9, 2);
        b.restore_positions(&pos).unwrap();
        let got: f64 = b.player(1).random();
        assert_eq!(next, got);
    }

    #[test]
    fn sample_index_respects_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.0, 1.0, 0.0];
        for _ in 0..100 {
            assert_eq!(sample_index(&w, &mut rng), 1);
        }
    }
}
