//! Command-line driver for the `affine-lift` library: synthetic database
//! construction, lifting, matching, attacks and timing.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
