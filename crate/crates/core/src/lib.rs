//! Decentralized learning of stationary equilibrium policies in n-player
//! stochastic games with independent chains.
//!
//! Each player owns a finite Markov chain whose transitions depend only on
//! its own state and action; players are coupled through a joint reward.
//! Stationary policies are represented by occupation measures living in
//! per-player polytopes, and equilibria are learned by episodic dual
//! averaging (or a KL mirror-descent variant) driven by importance-weighted
//! reward estimates collected over cover-time batches. Equilibrium quality
//! is measured by best-response gaps computed with exact small-game oracles.
//!
//! The crate is organized around that pipeline:
//!
//! - [`game`]: game representation, simulation stepping, benchmark generators;
//! - [`occupancy`]: occupation polytopes, stationary distributions, the
//!   policy/occupation correspondence;
//! - [`projection`]: Euclidean and KL projections onto occupation polytopes;
//! - [`learner`]: the episodic batch learner and its trajectory logs;
//! - [`metrics`]: exact payoffs/gradients, best-response linear programs,
//!   equilibrium-gap diagnostics;
//! - [`validation`]: runnable invariant suites backed by independent oracles.

pub mod error;
pub mod game;
pub mod learner;
pub mod linalg;
pub mod lp;
pub mod metrics;
pub mod occupancy;
pub mod projection;
pub mod rng;
pub mod validation;

pub use error::{Error, Result};
