//! Batch interface to the tangent-space CCA library: dataset ingestion,
//! analysis commands, JSON reports and simulated datasets.

pub mod commands;
pub mod error;
pub mod input;
pub mod report;

pub use error::{CliError, CliResult};
