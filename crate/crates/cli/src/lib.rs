//! Experiment harness: configuration files, the train / federate / eval /
//! adapt / report commands, and the CSV schemas they emit.

// Validation deliberately writes `!(x > 0.0)` so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod metrics;
pub mod output;
