//! File formats, run configuration, subcommands and the benchmark harness
//! behind the `unmix` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod cube;
pub mod error;
pub mod params;
pub mod pgm;

pub use error::{CliError, CliResult, FormatError};
