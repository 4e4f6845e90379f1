//! File formats, configuration and subcommands of the `chipseg` tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod fsio;
pub mod history;
pub mod kv;
pub mod render;
pub mod wafer_file;

pub use config::RunConfig;
