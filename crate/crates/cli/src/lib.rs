//! The `windcorr` command-line pipeline: generate, prepare, train, search,
//! evaluate, finetune and compare-strategies, each writing a run manifest
//! into its output directory.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod prepared;

pub use args::Cli;
pub use commands::run;
pub use error::{exit, CliError};
