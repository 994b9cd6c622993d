//! Simulation of resource-competitive broadcast on a single jammed channel.

pub mod acceptance;
pub mod adversary;
pub mod channel;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod params;
pub mod protocol;
pub mod reference;
pub mod rng;
pub mod sim;

pub use error::{ConfigError, Error, Result};
