//! Command implementations behind the `promptloop` binary.

pub mod commands;
pub mod config;
pub mod exit;
pub mod output;
