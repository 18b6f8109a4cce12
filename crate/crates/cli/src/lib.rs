//! Command implementations behind the `module-forge` binary.

pub mod commands;
pub mod config;
pub mod exit;
pub mod pipeline;

pub use commands::{
    cmd_add, cmd_cache_add, cmd_cache_counts, cmd_export, cmd_groups, cmd_render, cmd_update,
    AddOptions, CacheSummary, RenderOptions, Selection,
};
pub use config::{Config, GlobalArgs};
