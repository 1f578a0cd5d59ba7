//! Library side of the `purecma` command-line runner.

pub mod checkpoint;
pub mod config;
pub mod log;
pub mod runner;

pub use config::{Cli, ConfigError, RunConfig};
pub use runner::{resume, run, Outcome, RunError, RunResult};
