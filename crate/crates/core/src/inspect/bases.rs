//! Executable sets of common base images.
//!
//! Files are newline-delimited basenames with `#` comments; the base name
//! is the file stem (`debian-12.txt` → `debian-12`).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::ExecutableListing;

#[derive(Debug, Error)]
pub enum BaseSetError {
    #[error("base set name must not be empty")]
    EmptyName,
    #[error("base set {base}: line {line}: {entry:?} is not a basename")]
    NotABasename {
        base: String,
        line: usize,
        entry: String,
    },
    #[error("reading base set {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseSet {
    pub base_name: String,
    pub executables: BTreeSet<String>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("alpine-3.18", include_str!("../../bases/alpine-3.18.txt")),
    ("busybox-1.36", include_str!("../../bases/busybox-1.36.txt")),
    ("debian-12", include_str!("../../bases/debian-12.txt")),
    ("ubuntu-22.04", include_str!("../../bases/ubuntu-22.04.txt")),
];

impl BaseSet {
    pub fn parse(base_name: &str, text: &str) -> Result<Self, BaseSetError> {
        if base_name.trim().is_empty() {
            return Err(BaseSetError::EmptyName);
        }
        let mut executables = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            if entry.contains('/') || entry.contains(char::is_whitespace) {
                return Err(BaseSetError::NotABasename {
                    base: base_name.to_string(),
                    line: i + 1,
                    entry: entry.to_string(),
                });
            }
            executables.insert(entry.to_string());
        }
        Ok(Self {
            base_name: base_name.to_string(),
            executables,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BaseSetError> {
        let text = fs::read_to_string(path).map_err(|source| BaseSetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        Self::parse(name, &text)
    }

    /// Loads every `*.txt` file in `dir`, sorted by name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, BaseSetError> {
        let io_err = |source| BaseSetError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io_err)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::load(p)).collect()
    }

    /// The bundled debian, ubuntu, alpine and busybox sets.
    pub fn builtin() -> Vec<Self> {
        BUILTIN
            .iter()
            .map(|(name, text)| Self::parse(name, text).expect("bundled base set is valid"))
            .collect()
    }
}

/// Removes every entry whose basename appears in any of `bases`.
pub fn diff_against_bases(listing: &ExecutableListing, bases: &[BaseSet]) -> ExecutableListing {
    let mut out = listing.clone();
    out.entries
        .retain(|name, _| !bases.iter().any(|b| b.executables.contains(name)));
    out
}
