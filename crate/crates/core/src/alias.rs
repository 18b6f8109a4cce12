//! Frequency-based alias selection.
//!
//! A container's executables are ranked by how many containers in the
//! cache carry the same name. Selected are every rare name, every name
//! resembling the repository, and then a capped number of the next least
//! common names below a commonness ceiling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::cache::FrequencyTable;
use crate::identifier::ContainerIdentifier;
use crate::inspect::ExecutableListing;

/// Command words that must not be shadowed by an alias.
pub const RESERVED_NAMES: &[&str] = &["module", "ml"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AliasError {
    #[error("invalid alias name {0:?}")]
    InvalidName(String),
    #[error("alias {name:?} has unsafe or relative path {path:?}")]
    InvalidPath { name: String, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Names seen in fewer containers than this are always kept.
    pub rare_max: u64,
    /// How many further names may be added after the rare and matching ones.
    pub extra_cap: usize,
    /// Further names must be seen in fewer containers than this.
    pub common_max: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            rare_max: 10,
            extra_cap: 25,
            common_max: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedEntry {
    pub name: String,
    pub path: String,
    pub count: u64,
}

/// Listing entries sorted by ascending global count, then name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedCounts {
    pub entries: Vec<RankedEntry>,
}

pub fn rank(listing: &ExecutableListing, table: &FrequencyTable) -> RankedCounts {
    let mut entries: Vec<RankedEntry> = listing
        .entries
        .iter()
        .map(|(name, path)| RankedEntry {
            name: name.clone(),
            path: path.clone(),
            count: table.count(name),
        })
        .collect();
    entries.sort_by(|a, b| a.count.cmp(&b.count).then_with(|| a.name.cmp(&b.name)));
    RankedCounts { entries }
}

fn alnum_lower(s: &str) -> String {
    s.chars()
        .filter(char::is_ascii_alphanumeric)
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

/// Case-insensitive containment in either direction between the executable
/// name and the repository segment, ignoring non-alphanumerics. A name with
/// no alphanumerics never matches.
pub fn name_matches_identifier(name: &str, id: &ContainerIdentifier) -> bool {
    let name = alnum_lower(name);
    let repo = alnum_lower(id.repository());
    if name.is_empty() || repo.is_empty() {
        return false;
    }
    name.contains(&repo) || repo.contains(&name)
}

/// Alias names become shell command words: letters, digits and `_ . + -`,
/// not starting with `.`, `+` or `-`, and not a reserved module command.
pub fn is_valid_alias_name(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphanumeric() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '+' | '-'))
        && !RESERVED_NAMES.contains(&name)
}

/// Absolute path made only of characters that need no shell quoting.
pub fn is_safe_alias_path(path: &str) -> bool {
    path.starts_with('/')
        && path.len() > 1
        && path.chars().all(|c| {
            c.is_ascii_alphanumeric()
                || matches!(c, '/' | '_' | '.' | '+' | '-' | '@' | ',' | '=' | ':')
        })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasSet {
    aliases: BTreeMap<String, String>,
}

impl AliasSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, path: &str) -> Result<(), AliasError> {
        if !is_valid_alias_name(name) {
            return Err(AliasError::InvalidName(name.to_string()));
        }
        if !is_safe_alias_path(path) {
            return Err(AliasError::InvalidPath {
                name: name.to_string(),
                path: path.to_string(),
            });
        }
        self.aliases.insert(name.to_string(), path.to_string());
        Ok(())
    }

    /// Builds a set from pairs, rejecting the first invalid one.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, AliasError> {
        let mut set = Self::new();
        for (name, path) in pairs {
            set.insert(name, path)?;
        }
        Ok(set)
    }

    /// Keeps valid entries of a listing, warning about the rest.
    pub fn from_listing(listing: &ExecutableListing) -> Self {
        let mut set = Self::new();
        for (name, path) in &listing.entries {
            if let Err(e) = set.insert(name, path) {
                warn!(identifier = %listing.identifier, error = %e, "dropping alias");
            }
        }
        set
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.aliases.get(name).map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.aliases.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }

    /// Entries sorted by alias name.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.aliases.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.aliases.keys().map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), AliasError> {
        for (name, path) in &self.aliases {
            Self::new().insert(name, path)?;
        }
        Ok(())
    }
}

/// Picks the aliases for `id` from its executables.
///
/// Names that cannot be shell commands are dropped before ranking. An empty
/// listing yields an empty set with a warning.
pub fn select_aliases(
    id: &ContainerIdentifier,
    listing: &ExecutableListing,
    table: &FrequencyTable,
    thresholds: &Thresholds,
) -> AliasSet {
    if listing.is_empty() {
        warn!(identifier = %id, "empty executable listing, no aliases selected");
        return AliasSet::new();
    }
    let mut candidates = listing.clone();
    candidates.entries.retain(|name, path| {
        let ok = is_valid_alias_name(name) && is_safe_alias_path(path);
        if !ok {
            warn!(identifier = %id, name, path, "dropping executable unusable as alias");
        }
        ok
    });

    let ranked = rank(&candidates, table);
    let mut selected = AliasSet::new();
    let mut rest = Vec::new();
    for entry in &ranked.entries {
        if entry.count < thresholds.rare_max || name_matches_identifier(&entry.name, id) {
            selected
                .aliases
                .insert(entry.name.clone(), entry.path.clone());
        } else {
            rest.push(entry);
        }
    }
    for entry in rest
        .into_iter()
        .take_while(|e| e.count < thresholds.common_max)
        .take(thresholds.extra_cap)
    {
        selected
            .aliases
            .insert(entry.name.clone(), entry.path.clone());
    }
    selected
}
