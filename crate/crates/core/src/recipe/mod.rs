//! Registry entries (`container.yaml`): construction, canonical
//! serialization, refresh against fresh registry data, and static export.

mod export;
mod yaml;

use std::collections::BTreeMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tracing::warn;
use walkdir::WalkDir;

pub use export::{export_static_api, ExportSummary, LIBRARY_FILE};
pub use yaml::{parse_entry, serialize_entry};

use crate::alias::AliasSet;
use crate::fsutil::write_atomic;
use crate::identifier::{ContainerIdentifier, Digest};
use crate::tags::{compare_tags, TagOrdering};

pub const ENTRY_FILE: &str = "container.yaml";

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("no tags with digests available for {0}")]
    NoTags(String),
    #[error("cannot parse entry: {0}")]
    ParseFailure(String),
    #[error("entry schema violation: {0}")]
    SchemaViolation(String),
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<RecipeError>,
    },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl RecipeError {
    fn in_file(self, path: &Path) -> Self {
        RecipeError::InFile {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatestTag {
    pub tag: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub docker: ContainerIdentifier,
    pub url: String,
    pub maintainer: String,
    pub description: String,
    pub latest: LatestTag,
    pub tags: BTreeMap<String, Digest>,
    pub aliases: AliasSet,
    pub filter: Option<Vec<String>>,
}

impl RegistryEntry {
    pub fn validate(&self) -> Result<(), RecipeError> {
        match self.tags.get(&self.latest.tag) {
            Some(d) if *d == self.latest.digest => {}
            Some(_) => {
                return Err(RecipeError::SchemaViolation(format!(
                    "latest tag {:?} digest differs from tags entry",
                    self.latest.tag
                )))
            }
            None => {
                return Err(RecipeError::SchemaViolation(format!(
                    "latest tag {:?} missing from tags",
                    self.latest.tag
                )))
            }
        }
        if self.tags.keys().any(String::is_empty) {
            return Err(RecipeError::SchemaViolation("empty tag".into()));
        }
        self.aliases
            .validate()
            .map_err(|e| RecipeError::SchemaViolation(e.to_string()))
    }

    /// Tags in version order, oldest first.
    pub fn sorted_tags(&self) -> Vec<(&str, &Digest)> {
        let mut tags: Vec<_> = self.tags.iter().map(|(t, d)| (t.as_str(), d)).collect();
        tags.sort_by(|a, b| compare_tags(a.0, b.0));
        tags
    }
}

/// Descriptive fields for a new entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryMeta {
    pub url: String,
    pub maintainer: String,
    pub description: String,
}

impl EntryMeta {
    /// Placeholder metadata, flagged for curation.
    pub fn placeholder(id: &ContainerIdentifier, maintainer: &str) -> Self {
        Self {
            url: format!("https://{id}"),
            maintainer: maintainer.to_string(),
            description: format!("{} container", id.repository()),
        }
    }
}

/// Ordered tags that have a digest, plus the chosen latest.
fn select_tags(
    id: &ContainerIdentifier,
    ordering: &TagOrdering,
    digests: &BTreeMap<String, Digest>,
) -> Result<(BTreeMap<String, Digest>, LatestTag), RecipeError> {
    let tags: BTreeMap<String, Digest> = ordering
        .ordered
        .iter()
        .filter_map(|c| digests.get(&c.raw).map(|d| (c.raw.clone(), d.clone())))
        .collect();
    let chosen = match ordering
        .latest
        .as_ref()
        .filter(|l| tags.contains_key(&l.raw))
    {
        Some(latest) => latest.raw.clone(),
        None => {
            let fallback = tags
                .keys()
                .next_back()
                .ok_or_else(|| RecipeError::NoTags(id.to_string()))?
                .clone();
            warn!(identifier = %id, tag = %fallback, "no version-like tag, using greatest raw tag as latest");
            fallback
        }
    };
    let latest = LatestTag {
        digest: tags[&chosen].clone(),
        tag: chosen,
    };
    Ok((tags, latest))
}

pub fn build_entry(
    id: &ContainerIdentifier,
    ordering: &TagOrdering,
    digests: &BTreeMap<String, Digest>,
    aliases: AliasSet,
    meta: EntryMeta,
) -> Result<RegistryEntry, RecipeError> {
    let (tags, latest) = select_tags(id, ordering, digests)?;
    let entry = RegistryEntry {
        docker: id.clone(),
        url: meta.url,
        maintainer: meta.maintainer,
        description: meta.description,
        latest,
        tags,
        aliases,
        filter: None,
    };
    entry.validate()?;
    Ok(entry)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntryDelta {
    pub added_tags: Vec<String>,
    pub removed_tags: Vec<String>,
    pub digest_changes: BTreeMap<String, (Digest, Digest)>,
    /// Old and new latest tag, when the tag itself changed.
    pub latest_change: Option<(String, String)>,
}

impl EntryDelta {
    pub fn between(old: &RegistryEntry, new: &RegistryEntry) -> Self {
        let mut added: Vec<String> = new
            .tags
            .keys()
            .filter(|t| !old.tags.contains_key(*t))
            .cloned()
            .collect();
        let mut removed: Vec<String> = old
            .tags
            .keys()
            .filter(|t| !new.tags.contains_key(*t))
            .cloned()
            .collect();
        added.sort_by(|a, b| compare_tags(a, b));
        removed.sort_by(|a, b| compare_tags(a, b));
        let digest_changes = old
            .tags
            .iter()
            .filter_map(|(tag, d)| match new.tags.get(tag) {
                Some(nd) if nd != d => Some((tag.clone(), (d.clone(), nd.clone()))),
                _ => None,
            })
            .collect();
        let latest_change = (old.latest.tag != new.latest.tag)
            .then(|| (old.latest.tag.clone(), new.latest.tag.clone()));
        Self {
            added_tags: added,
            removed_tags: removed,
            digest_changes,
            latest_change,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.added_tags.is_empty()
            && self.removed_tags.is_empty()
            && self.digest_changes.is_empty()
            && self.latest_change.is_none()
    }

    /// One line per change: `+tag`, `-tag`, `~tag old -> new`,
    /// `latest old -> new`.
    pub fn lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        out.extend(self.added_tags.iter().map(|t| format!("+{t}")));
        out.extend(self.removed_tags.iter().map(|t| format!("-{t}")));
        out.extend(
            self.digest_changes
                .iter()
                .map(|(t, (old, new))| format!("~{t} {old} -> {new}")),
        );
        if let Some((old, new)) = &self.latest_change {
            out.push(format!("latest {old} -> {new}"));
        }
        out
    }
}

impl fmt::Display for EntryDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.lines() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// Replaces the tag map with fresh data, keeping aliases and metadata.
pub fn update_entry(
    existing: &RegistryEntry,
    ordering: &TagOrdering,
    digests: &BTreeMap<String, Digest>,
) -> Result<(RegistryEntry, EntryDelta), RecipeError> {
    let (tags, latest) = select_tags(&existing.docker, ordering, digests)?;
    let updated = RegistryEntry {
        tags,
        latest,
        ..existing.clone()
    };
    updated.validate()?;
    let delta = EntryDelta::between(existing, &updated);
    Ok((updated, delta))
}

pub fn entry_path(registry_root: &Path, id: &ContainerIdentifier) -> PathBuf {
    registry_root.join(id.relative_path()).join(ENTRY_FILE)
}

pub fn load_entry(path: &Path) -> Result<RegistryEntry, RecipeError> {
    let text = std::fs::read_to_string(path).map_err(|source| RecipeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entry = parse_entry(&text).map_err(|e| e.in_file(path))?;
    let expected_suffix = entry.docker.relative_path().join(ENTRY_FILE);
    if !path.ends_with(&expected_suffix) {
        return Err(RecipeError::SchemaViolation(format!(
            "entry for {} stored outside {}",
            entry.docker,
            expected_suffix.display()
        ))
        .in_file(path));
    }
    Ok(entry)
}

/// Atomically writes the canonical form under the identifier path.
pub fn write_entry(registry_root: &Path, entry: &RegistryEntry) -> Result<PathBuf, RecipeError> {
    let path = entry_path(registry_root, &entry.docker);
    let text = serialize_entry(entry)?;
    write_atomic(&path, text.as_bytes()).map_err(|source| RecipeError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Every `container.yaml` below `registry_root`, sorted.
pub fn entry_files(registry_root: &Path) -> Result<Vec<PathBuf>, RecipeError> {
    if !registry_root.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(registry_root) {
        let entry = entry.map_err(|e| RecipeError::Io {
            path: e.path().unwrap_or(registry_root).to_path_buf(),
            source: e
                .into_io_error()
                .unwrap_or_else(|| io::Error::other("walk failed")),
        })?;
        if entry.file_type().is_file() && entry.file_name() == ENTRY_FILE {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}
