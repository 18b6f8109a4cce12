//! Container module registry automation.
//!
//! Discovers tags and digests from registry APIs, extracts executables from
//! image layers, ranks them by cross-container frequency to choose command
//! aliases, and emits registry entries, module files and update schedules.

pub mod alias;
pub mod cache;
mod fsutil;
pub mod identifier;
pub mod inspect;
pub mod recipe;
pub mod registry;
pub mod render;
pub mod scheduler;
pub mod tags;

pub use fsutil::write_atomic;
pub use identifier::{ContainerIdentifier, Digest, IdentifierError};
