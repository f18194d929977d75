//! Simulator for a hybrid belief-based Byzantine consensus protocol.

pub mod adversary;
pub mod belief;
pub mod classifier;
pub mod config;
pub mod consensus;
pub mod error;
pub mod events;
pub mod ledger;
pub mod metrics;
pub mod net;
pub mod reliability;
pub mod runner;
pub mod workload;

pub use error::{Error, Result};
