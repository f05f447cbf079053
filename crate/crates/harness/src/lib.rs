//! Experiment harness: configuration, the reference experiments, metrics
//! and deterministic report emission.

pub mod config;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod report;

pub use error::{HarnessError, Result};
