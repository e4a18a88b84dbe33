//! Drift-triggered model maintenance for batch-process regression.
//!
//! A feedforward network is trained on the first two batches of a plant
//! time series, replayed over the remaining stream, and repaired with one of
//! three transfer-learning strategies once its daily error stays above twice
//! the test error for three consecutive days. Diagnostics cover drift
//! statistics, exact Shapley attributions, per-layer weight distributions
//! and wall-clock timing.

pub mod ann;
pub mod data;
pub mod drift;
pub mod explain;
pub mod monitor;
pub(crate) mod numfmt;
pub mod pipeline;
pub mod tuning;
pub mod update;
