//! Command-line front end for `matt-core` and the review HTTP server.

pub mod commands;
pub mod server;

pub use commands::{exit_code, run, Cli};
