//! Configuration, orchestration and persistence for the `snls` binary.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod report;

pub use config::RunConfig;
pub use error::CliError;
pub use experiments::{rerun, run, RunOptions, RunOutcome};
pub use manifest::RunManifest;
