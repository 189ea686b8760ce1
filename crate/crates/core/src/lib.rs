//! Minimum-entropy sensor scheduling for hidden Markov processes.
//!
//! A hidden Markov chain evolves on its own; at every step one sensor out of
//! a bank is read. The belief over the hidden state is a Markov chain on the
//! probability simplex whose kernel depends on the chosen sensor, and the
//! long-run average entropy of that belief measures how poorly the schedule
//! observes the chain. This crate evaluates schedules exactly, by
//! simulation, and on a discretized simplex, and finds the best schedule on
//! the grid with average-cost policy iteration.

pub mod chain;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod filter;
pub mod model;
pub mod policy;
pub mod simulate;
pub mod solver;

pub use error::{Error, Result};
pub use filter::{Belief, CostFunction, LogBase};
pub use model::PomdpModel;
pub use policy::PolicyFunction;
