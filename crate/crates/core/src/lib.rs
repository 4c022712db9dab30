//! Core algorithms for context-aware daily-life stress monitoring.
//!
//! Everything in this crate is a pure function over value data: PPG cleaning
//! and windowing, heart-rate-variability features, contextual feature binning,
//! window labeling and k-NN imputation, tree ensembles with Gini importance,
//! exact Shapley explanations, and the smart EMA trigger rules.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the simulator
//! and the command line live in the `stresswatch` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod context;
pub mod dataset;
pub mod explain;
pub mod hrv;
pub mod learn;
pub mod sema;
pub mod signal;
pub mod spatial;
pub mod stats;

/// Milliseconds since the Unix epoch.
pub type EpochMs = i64;

pub const MINUTE_MS: i64 = 60_000;
pub const HOUR_MS: i64 = 60 * MINUTE_MS;
pub const DAY_MS: i64 = 24 * HOUR_MS;
