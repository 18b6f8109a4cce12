//! Container identifiers and content digests.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentifierError {
    #[error("invalid container identifier {input:?}: {reason}")]
    InvalidIdentifier { input: String, reason: &'static str },
    #[error("invalid digest {0:?}: expected sha256:<64 lowercase hex>")]
    InvalidDigest(String),
}

fn host_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^[a-z0-9](?:[a-z0-9-]*[a-z0-9])?(?:\.[a-z0-9](?:[a-z0-9-]*[a-z0-9])?)*(?::[0-9]+)?$",
        )
        .unwrap()
    })
}

fn component_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z0-9]+(?:(?:[._]|__|-+)[a-z0-9]+)*$").unwrap())
}

/// Fully-qualified image name: `host/namespace/repository`.
///
/// The namespace may span several path segments. Tags and digests are not
/// part of the identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContainerIdentifier {
    registry_host: String,
    namespace: String,
    repository: String,
}

impl ContainerIdentifier {
    pub fn parse(input: &str) -> Result<Self, IdentifierError> {
        let invalid = |reason| IdentifierError::InvalidIdentifier {
            input: input.to_string(),
            reason,
        };
        if input.is_empty() {
            return Err(invalid("empty"));
        }
        if input.chars().any(|c| c.is_ascii_uppercase()) {
            return Err(invalid("canonical form is lowercase"));
        }
        if input.contains('@') {
            return Err(invalid("digest suffix not allowed"));
        }
        let segments: Vec<&str> = input.split('/').collect();
        if segments.len() < 3 {
            return Err(invalid("expected host/namespace/repository"));
        }
        let host = segments[0];
        if !host_re().is_match(host) {
            return Err(invalid("bad registry host"));
        }
        let rest = &segments[1..];
        for seg in rest {
            if seg.contains(':') {
                return Err(invalid("tag suffix not allowed"));
            }
            if !component_re().is_match(seg) {
                return Err(invalid("bad path component"));
            }
        }
        let (repository, namespace) = rest.split_last().expect("at least two path segments");
        Ok(Self {
            registry_host: host.to_string(),
            namespace: namespace.join("/"),
            repository: repository.to_string(),
        })
    }

    pub fn registry_host(&self) -> &str {
        &self.registry_host
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn repository(&self) -> &str {
        &self.repository
    }

    /// The repository path as used in `/v2/<name>/...` URLs.
    pub fn name(&self) -> String {
        format!("{}/{}", self.namespace, self.repository)
    }

    /// Relative filesystem path mirroring the identifier segments.
    pub fn relative_path(&self) -> PathBuf {
        let mut path = PathBuf::from(&self.registry_host);
        for seg in self.namespace.split('/') {
            path.push(seg);
        }
        path.push(&self.repository);
        path
    }
}

impl fmt::Display for ContainerIdentifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.registry_host, self.namespace, self.repository
        )
    }
}

impl FromStr for ContainerIdentifier {
    type Err = IdentifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for ContainerIdentifier {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContainerIdentifier {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// A `sha256:<hex>` content address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(String);

impl Digest {
    pub fn parse(input: &str) -> Result<Self, IdentifierError> {
        let valid = input.strip_prefix("sha256:").is_some_and(|hex| {
            hex.len() == 64 && hex.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
        });
        if valid {
            Ok(Self(input.to_string()))
        } else {
            Err(IdentifierError::InvalidDigest(input.to_string()))
        }
    }

    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self::from_hasher(Sha256::new_with_prefix(bytes))
    }

    pub(crate) fn from_hasher(hasher: Sha256) -> Self {
        Self(format!("sha256:{:x}", hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn hex(&self) -> &str {
        &self.0["sha256:".len()..]
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Digest {
    type Err = IdentifierError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}
