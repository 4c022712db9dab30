//! File formats, the synthetic study simulator, the featurization pipeline
//! and the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod formats;
pub mod sim;
pub mod pipeline;
pub mod manifest;
pub mod cli;
