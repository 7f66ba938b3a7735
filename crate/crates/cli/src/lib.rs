//! Command-line experiment harness: configuration, pipeline stages and the
//! `reproduce` driver.

pub mod config;
pub mod pipeline;

pub use config::{ConfigError, RunConfig};
