//! Crowdsourced label aggregation and margin-based pruning of ambiguous
//! tasks.
//!
//! The crate covers the full loop: load or simulate a crowdsourced dataset
//! ([`dataset`], [`simulation`]), aggregate votes into soft labels
//! ([`aggregation`], [`glad`]), train a small classifier that records its
//! per-epoch softmax margins ([`trainer`]), score each task's ambiguity
//! from those margins and prune at a quantile threshold
//! ([`identification`]), and evaluate accuracy and calibration of a model
//! retrained on the pruned, re-aggregated labels ([`metrics`],
//! [`pipeline`]).

pub mod aggregation;
pub mod dataset;
pub mod error;
pub mod glad;
pub mod identification;
pub mod metrics;
pub mod pipeline;
pub mod simulation;
pub mod trainer;

pub use error::{Error, Result};
