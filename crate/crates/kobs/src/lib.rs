//! Command-line front end of `kobs-core`: configuration, file formats,
//! figures and the subcommands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use cli::{run_from, Cli};
pub use error::CliError;
