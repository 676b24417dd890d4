//! Command-line driver for the crossbar simulator: configuration, table
//! files, reports and the experiment commands.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod lutfile;
pub mod report;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
