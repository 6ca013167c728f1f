//! Multi-agent taxi-fleet routing and learning library.
//!
//! The pipeline: estimate (or synthesize) a cell-level demand model, solve
//! the induced Markov decision process for warm-start Q-values, run online
//! SARSA learning — centralized or fully distributed over a time-varying
//! communication graph — and assign customers to vehicles through a
//! potential game played with binary log-linear learning, with optional
//! ride-pooling. A discrete-time simulator drives the whole loop and
//! exports reproducible metrics.

pub mod consensus;
pub mod demand;
pub mod distributed;
pub mod error;
pub mod game;
pub mod grid;
pub mod matrix;
pub mod mdp;
pub mod qtable;
pub mod sarsa;
pub mod sim;

pub use error::{Error, Result};
