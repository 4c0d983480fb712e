//! Numerical laboratory for a jump-flow model of waning and boosting
//! immune status. Between infections the status decays along x' = F(x);
//! an infection at status x boosts it to G(x); the waiting time to the
//! next infection has density q(x_b, a) in the post-boost status x_b.
//!
//! The crate simulates the process, computes its stationary densities by
//! discretizing the boundary transfer operator, evolves the associated
//! transport equation, and evaluates the drift and sweeping criteria that
//! decide between stabilization and escape to infinity.

pub mod cli;
pub mod config;
pub mod error;
pub mod evolve;
pub mod grid;
pub mod model;
pub mod preset;
pub mod quad;
pub mod sim;
pub mod stationary;

pub use error::{Error, Result};
