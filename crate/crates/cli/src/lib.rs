//! Config parsing, deterministic JSON output and the subcommand pipeline
//! behind the `gp3` binary.

pub mod config;
pub mod json;
pub mod pipeline;

pub use config::RunConfig;
pub use pipeline::{run, Command, Options};
