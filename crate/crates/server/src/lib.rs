//! The `handpilot` command-line tool and its websocket session server.

pub mod cli;
pub mod config;
pub mod serve;

pub use cli::{run, CliError};
