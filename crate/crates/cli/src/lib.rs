//! Command-line surface and HTTP service over the `relevance` library.

pub mod commands;
pub mod config;
pub mod scorer;
pub mod server;

pub use commands::{run, Cli};
