//! Online convex optimization for demand-response setpoint tracking.
//!
//! An aggregator dispatches adjustment signals `μ_t` to a fleet of flexible
//! loads so that the aggregate response `c_tᵀμ_t` tracks a setpoint, under
//! full, bandit, partial or Bernoulli feedback.

pub mod algorithms;
pub mod cli;
pub mod config;
pub mod error;
pub mod hindsight;
pub mod loads;
pub mod oco;
pub mod output;
pub mod sim;

pub use error::{Error, Result};
