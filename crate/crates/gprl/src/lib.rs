//! Interpretable control policies by genetic programming on learned world
//! models.
//!
//! The pipeline: collect batch transition data from a benchmark system,
//! train per-state-variable delta regressors plus a reward regressor into a
//! world model, evolve algebraic policy trees by a genetic algorithm whose
//! fitness is the discounted Monte-Carlo return on that model, and evaluate
//! the per-complexity Pareto archive on the real dynamics. A neural teacher
//! policy and a symbolic-regression imitation baseline are included for
//! comparison.

pub mod config;
pub mod envs;
pub mod error;
pub mod expr;
pub mod genetics;
pub mod rl;
pub mod worldmodel;

pub use error::{Error, Result};
