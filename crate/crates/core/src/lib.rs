//! Tabular MDP toolkit for model-based Q-value iteration with a generative
//! model.
//!
//! * [`mdp`]: finite discounted MDPs, Bellman operators and exact solvers.
//! * [`generative`]: seeded per-pair sampling streams and empirical models.
//! * [`qvi`]: the Q-value iteration algorithm with its budget formulas.
//! * [`variance`]: return-variance recursion, Bernstein deviation terms and
//!   numerical audits of the error analysis.
//! * [`hard`]: the three-layer hard MDP family used for lower bounds.
//! * [`experiment`]: seeded CSV experiments behind the `qvi` binary.

pub mod error;
pub mod experiment;
pub mod generative;
pub mod hard;
pub mod mdp;
pub mod qvi;
pub mod stats;
pub mod variance;

pub use error::{Error, Result};
pub use mdp::{Mdp, Policy, QFunction, VFunction};
