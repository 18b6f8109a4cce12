//! Executable discovery inside container images.
//!
//! Layers are unpacked into a scratch tree, the PATH directories from the
//! image config are scanned for executables, and the result can be reduced
//! by the executables already present in common base images.

mod bases;
mod enumerate;
mod tree;
mod unpack;

use std::collections::BTreeMap;

pub use bases::{diff_against_bases, BaseSet, BaseSetError};
pub use enumerate::enumerate_executables;
pub use tree::{resolve_in_tree, FsTree, ScratchTree};
pub use unpack::{unpack_layers, UnpackError};

use crate::identifier::ContainerIdentifier;
use crate::registry::ImageConfig;

/// Used when an image config carries no `PATH` at all.
pub const DEFAULT_PATH: &str = "/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathDirs {
    dirs: Vec<String>,
}

impl PathDirs {
    /// Splits a `PATH` value, dropping empty and relative entries.
    pub fn from_path_value(value: &str) -> Self {
        Self {
            dirs: value
                .split(':')
                .filter(|d| d.starts_with('/'))
                .map(str::to_string)
                .collect(),
        }
    }

    pub fn dirs(&self) -> &[String] {
        &self.dirs
    }
}

/// Reads the last `PATH=` entry of the config environment.
pub fn extract_path_dirs(config: &ImageConfig) -> PathDirs {
    let value = config
        .env
        .iter()
        .rev()
        .find_map(|e| e.strip_prefix("PATH="))
        .unwrap_or(DEFAULT_PATH);
    PathDirs::from_path_value(value)
}

/// Executables found on a container's PATH, keyed by basename.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutableListing {
    pub identifier: ContainerIdentifier,
    /// basename → absolute path
    pub entries: BTreeMap<String, String>,
}

impl ExecutableListing {
    pub fn new(identifier: ContainerIdentifier) -> Self {
        Self {
            identifier,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Checks that every path is absolute and ends in its own name.
    pub fn validate(&self) -> Result<(), String> {
        for (name, path) in &self.entries {
            if name.is_empty() || name.contains('/') {
                return Err(format!("invalid executable name {name:?}"));
            }
            if !path.starts_with('/') {
                return Err(format!("path for {name:?} is not absolute: {path:?}"));
            }
            if path.rsplit('/').next() != Some(name.as_str()) {
                return Err(format!("path {path:?} does not end in {name:?}"));
            }
        }
        Ok(())
    }
}
