//! On-disk cache of per-container executable listings and the derived
//! cross-container frequency table.
//!
//! Layout: `<root>/<host>/<namespace...>/<repository>/binaries.json` per
//! container, `<root>/counts.json` for the aggregate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::fsutil::write_atomic;
use crate::identifier::ContainerIdentifier;
use crate::inspect::ExecutableListing;

pub const LISTING_FILE: &str = "binaries.json";
pub const COUNTS_FILE: &str = "counts.json";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt listing {path}: {reason}")]
    CorruptListing { path: PathBuf, reason: String },
    #[error("invalid listing for {identifier}: {reason}")]
    InvalidListing { identifier: String, reason: String },
    #[error("cannot parse counts: {0}")]
    ParseFailure(String),
    #[error("counts violate invariants: {0}")]
    InvariantViolation(String),
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> CacheError + '_ {
    move |source| CacheError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ListingDocument {
    identifier: String,
    executables: BTreeMap<String, String>,
}

fn to_json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable document");
    out.push(b'\n');
    out
}

pub fn listing_to_json(listing: &ExecutableListing) -> Vec<u8> {
    to_json_line(&ListingDocument {
        identifier: listing.identifier.to_string(),
        executables: listing.entries.clone(),
    })
}

pub fn listing_from_json(bytes: &[u8]) -> Result<ExecutableListing, String> {
    let doc: ListingDocument = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    let identifier = ContainerIdentifier::parse(&doc.identifier).map_err(|e| e.to_string())?;
    let listing = ExecutableListing {
        identifier,
        entries: doc.executables,
    };
    listing.validate()?;
    Ok(listing)
}

#[derive(Debug, Clone)]
pub struct CacheStore {
    root: PathBuf,
}

impl CacheStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn listing_path(&self, id: &ContainerIdentifier) -> PathBuf {
        self.root.join(id.relative_path()).join(LISTING_FILE)
    }

    pub fn counts_path(&self) -> PathBuf {
        self.root.join(COUNTS_FILE)
    }

    pub fn contains(&self, id: &ContainerIdentifier) -> bool {
        self.listing_path(id).is_file()
    }

    /// Atomically writes the listing document, replacing any previous one.
    pub fn store_listing(&self, listing: &ExecutableListing) -> Result<PathBuf, CacheError> {
        listing
            .validate()
            .map_err(|reason| CacheError::InvalidListing {
                identifier: listing.identifier.to_string(),
                reason,
            })?;
        let path = self.listing_path(&listing.identifier);
        write_atomic(&path, &listing_to_json(listing)).map_err(io_failure(&path))?;
        Ok(path)
    }

    pub fn load_listing(
        &self,
        id: &ContainerIdentifier,
    ) -> Result<Option<ExecutableListing>, CacheError> {
        let path = self.listing_path(id);
        match fs::read(&path) {
            Ok(bytes) => read_listing(&path, &bytes).map(Some),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_failure(&path)(e)),
        }
    }

    /// All listing files under the root, sorted.
    pub fn listing_files(&self) -> Result<Vec<PathBuf>, CacheError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut files = Vec::new();
        for entry in WalkDir::new(&self.root).follow_links(false) {
            let entry = entry.map_err(|e| {
                let path = e.path().unwrap_or(&self.root).to_path_buf();
                CacheError::IoFailure {
                    path,
                    source: e
                        .into_io_error()
                        .unwrap_or_else(|| io::Error::other("walk failed")),
                }
            })?;
            if entry.file_type().is_file() && entry.file_name() == LISTING_FILE {
                files.push(entry.into_path());
            }
        }
        files.sort();
        Ok(files)
    }

    /// Counts, per executable name, how many stored containers carry it.
    /// Each listing file is read exactly once.
    pub fn build_counts(&self) -> Result<FrequencyTable, CacheError> {
        let mut table = FrequencyTable::default();
        for path in self.listing_files()? {
            let bytes = fs::read(&path).map_err(io_failure(&path))?;
            let listing = read_listing(&path, &bytes)?;
            let expected = self.listing_path(&listing.identifier);
            if expected != path {
                return Err(CacheError::CorruptListing {
                    path,
                    reason: format!(
                        "identifier {} belongs at {}",
                        listing.identifier,
                        expected.display()
                    ),
                });
            }
            table.add_listing(&listing);
        }
        Ok(table)
    }

    /// Builds the table and writes it to `counts.json`.
    pub fn write_counts(&self) -> Result<(PathBuf, FrequencyTable), CacheError> {
        let table = self.build_counts()?;
        let path = self.counts_path();
        write_atomic(&path, &table.to_json()).map_err(io_failure(&path))?;
        Ok((path, table))
    }
}

fn read_listing(path: &Path, bytes: &[u8]) -> Result<ExecutableListing, CacheError> {
    listing_from_json(bytes).map_err(|reason| CacheError::CorruptListing {
        path: path.to_path_buf(),
        reason,
    })
}

/// Executable name → number of containers carrying it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub total_containers: u64,
    pub counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    /// Count for `name`; zero when never seen.
    pub fn count(&self, name: &str) -> u64 {
        self.counts.get(name).copied().unwrap_or(0)
    }

    /// Adds one container; each distinct name contributes once.
    pub fn add_listing(&mut self, listing: &ExecutableListing) {
        let names: BTreeSet<&String> = listing.entries.keys().collect();
        for name in names {
            *self.counts.entry(name.clone()).or_insert(0) += 1;
        }
        self.total_containers += 1;
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        for (name, &count) in &self.counts {
            if count == 0 || count > self.total_containers {
                return Err(CacheError::InvariantViolation(format!(
                    "count {count} for {name:?} outside 1..={}",
                    self.total_containers
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_json_line(self)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, CacheError> {
        let table: Self =
            serde_json::from_slice(bytes).map_err(|e| CacheError::ParseFailure(e.to_string()))?;
        table.validate()?;
        Ok(table)
    }
}

pub fn load_counts(path: &Path) -> Result<FrequencyTable, CacheError> {
    let bytes = fs::read(path).map_err(io_failure(path))?;
    FrequencyTable::from_json(&bytes)
}
