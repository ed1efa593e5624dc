//! File formats, configuration, reports and the command runner built on
//! `zskt-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod datasets;
mod error;
pub mod outputs;
pub mod plot;
pub mod report;

pub use error::{Error, Result};
