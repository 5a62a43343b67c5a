//! Commands, configuration and dataset layout behind the `hcn` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
