//! Library side of the `alter` command: config handling and subcommands.

pub mod commands;
pub mod config;
pub mod outputs;
