//! Library half of `flockctl`: config parsing, CSV writers, and the command
//! implementations the thin binary dispatches to.

pub mod commands;
pub mod config;
pub mod output;
