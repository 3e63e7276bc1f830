//! Rework-anomaly detection benchmark over process event-log variants.

pub mod eval;
pub mod eventlog;
pub mod gateway;
pub mod harness;
pub mod layout;
pub mod prompt;
pub mod rework;
pub mod rng;
