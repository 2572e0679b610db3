//! A reinforcement-learning toolkit built around reward decomposition:
//! per-component value heads trained on a decomposed reward function and
//! combined by an aggregator for action selection, plus general value
//! function banks, exploration heads, exact small-MDP solvers for
//! verification, and a reproducible experiment harness on two built-in
//! environments (a fruit-collection grid and a Pac-Man-style maze).

pub mod agent;
pub mod envs;
pub mod error;
pub mod gvf;
pub mod harness;
pub mod heads;
pub mod mdp;
pub mod oracle;

pub use error::{HraError, Result};
