//! Command-line front end for `flowkit-core`: TOML run configs, JSON
//! checkpoints, and CSV/PGM/JSON outputs.

pub mod checkpoint;
pub mod commands;
pub mod config;

pub use checkpoint::Checkpoint;
pub use commands::CliError;
pub use config::RunConfig;
