//! Configuration, file formats and subcommands of the `bmeas` experiment
//! runner.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::{CliError, Result};
