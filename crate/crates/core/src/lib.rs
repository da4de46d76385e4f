//! Event-triggered model predictive control for vehicle path following, with
//! reinforcement-learned trigger policies.

pub mod dynamics;
pub mod empc;
pub mod nn;
pub mod agents;
pub mod error;
pub mod harness;
pub mod ocp;

pub use error::{Error, Result};
