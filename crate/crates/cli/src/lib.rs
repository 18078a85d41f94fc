//! Subcommand implementations behind the `rsrs` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod published;
