//! Uncertainty-based out-of-distribution classification for value-based deep
//! reinforcement learning.
//!
//! The crate bundles everything needed to train Q-learning agents whose value
//! network reports epistemic uncertainty, to fit a one-class threshold over
//! that uncertainty, and to evaluate the resulting classifier on environment
//! configurations that drift away from the training configuration.
//!
//! Module map:
//!
//! - [`nn`]: small feed-forward engine (dense + concrete-dropout layers,
//!   reverse-mode gradients, Adam).
//! - [`estimators`]: MC concrete dropout, bootstrap and bootstrap+prior
//!   Q-networks and their uncertainty estimates.
//! - [`agent`]: replay buffer, targets, epsilon-greedy control and the
//!   training loop.
//! - [`env`]: the two-room gridworld and the simplified lander families.
//! - [`classifier`]: threshold fitting and labelling.
//! - [`eval`]: rollouts, confusion counts, metric sweeps and curves.
//! - [`snapshot`]: the versioned text format for trained networks.
//! - [`config`] and [`cli`]: run configuration and command entry points.

pub mod agent;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod snapshot;

pub use error::{Error, Result};
pub use rng::RandomSource;
