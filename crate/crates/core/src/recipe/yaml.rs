//! Canonical `container.yaml` text.
//!
//! Output is emitted by hand so that key order, indentation and quoting are
//! fixed: two-space indents, tags in version order, scalars plain unless a
//! YAML reader could take them for something other than a string.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_yaml::{Mapping, Value};

use super::{LatestTag, RecipeError, RegistryEntry};
use crate::alias::AliasSet;
use crate::identifier::{ContainerIdentifier, Digest};

const REQUIRED_KEYS: [&str; 7] = [
    "docker",
    "url",
    "maintainer",
    "description",
    "latest",
    "tags",
    "aliases",
];
const OPTIONAL_KEYS: [&str; 1] = ["filter"];

pub fn serialize_entry(entry: &RegistryEntry) -> Result<String, RecipeError> {
    entry.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "docker: {}", scalar(&entry.docker.to_string()));
    let _ = writeln!(out, "url: {}", scalar(&entry.url));
    let _ = writeln!(out, "maintainer: {}", scalar(&entry.maintainer));
    let _ = writeln!(out, "description: {}", scalar(&entry.description));
    out.push_str("latest:\n");
    let _ = writeln!(
        out,
        "  {}: {}",
        scalar(&entry.latest.tag),
        entry.latest.digest
    );
    out.push_str("tags:\n");
    for (tag, digest) in entry.sorted_tags() {
        let _ = writeln!(out, "  {}: {}", scalar(tag), digest);
    }
    if entry.aliases.is_empty() {
        out.push_str("aliases: {}\n");
    } else {
        out.push_str("aliases:\n");
        for (name, path) in entry.aliases.iter() {
            let _ = writeln!(out, "  {}: {}", scalar(name), scalar(path));
        }
    }
    match &entry.filter {
        None => {}
        Some(f) if f.is_empty() => out.push_str("filter: []\n"),
        Some(f) => {
            out.push_str("filter:\n");
            for pattern in f {
                let _ = writeln!(out, "  - {}", scalar(pattern));
            }
        }
    }
    Ok(out)
}

/// Renders a string scalar, quoting only when needed.
fn scalar(s: &str) -> String {
    if s.chars().any(|c| {
        c.is_control() || c == '\u{feff}' || c == '\u{85}' || c == '\u{2028}' || c == '\u{2029}'
    }) {
        // JSON string syntax is valid YAML double-quoted syntax.
        serde_json::to_string(s).expect("string serializes")
    } else if needs_quotes(s) {
        format!("'{}'", s.replace('\'', "''"))
    } else {
        s.to_string()
    }
}

fn needs_quotes(s: &str) -> bool {
    let Some(first) = s.chars().next() else {
        return true;
    };
    if !s.is_ascii() {
        return true;
    }
    if "-?:,[]{}#&*!|>'\"%@`".contains(first) || first == ' ' {
        return true;
    }
    if s.ends_with(' ')
        || s.ends_with(':')
        || s.contains(": ")
        || s.contains(" #")
        || s.contains('\t')
    {
        return true;
    }
    looks_like_non_string(s)
}

/// Strings a YAML 1.1 or 1.2 reader might resolve to null, bool, number or
/// timestamp.
fn looks_like_non_string(s: &str) -> bool {
    let lower = s.to_ascii_lowercase();
    if matches!(
        lower.as_str(),
        "~" | "null" | "true" | "false" | "yes" | "no" | "on" | "off" | "y" | "n" | "=" | "<<"
    ) {
        return true;
    }
    let body = lower.trim_start_matches(['+', '-']);
    if matches!(body, ".inf" | ".nan") {
        return true;
    }
    if body.starts_with("0x") || body.starts_with("0o") || body.starts_with("0b") {
        return true;
    }
    // Anything made only of digits and number/date punctuation.
    let numeric_chars = |c: char| c.is_ascii_digit() || "._:+-e".contains(c);
    let starts_numeric = body.starts_with(|c: char| c.is_ascii_digit()) || body.starts_with('.');
    starts_numeric && body.chars().all(numeric_chars) && body.chars().any(|c| c.is_ascii_digit())
}

pub fn parse_entry(text: &str) -> Result<RegistryEntry, RecipeError> {
    let value: Value =
        serde_yaml::from_str(text).map_err(|e| RecipeError::ParseFailure(e.to_string()))?;
    let Value::Mapping(map) = value else {
        return Err(schema("top level must be a mapping"));
    };
    let mut fields: BTreeMap<String, Value> = BTreeMap::new();
    for (k, v) in map {
        let key = match k {
            Value::String(s) => s,
            other => return Err(schema(format!("non-string key {}", describe(&other)))),
        };
        if !REQUIRED_KEYS.contains(&key.as_str()) && !OPTIONAL_KEYS.contains(&key.as_str()) {
            return Err(schema(format!("unexpected field {key:?}")));
        }
        fields.insert(key, v);
    }
    let missing: Vec<&str> = REQUIRED_KEYS
        .iter()
        .copied()
        .filter(|k| !fields.contains_key(*k))
        .collect();
    if !missing.is_empty() {
        return Err(schema(format!("missing field(s): {}", missing.join(", "))));
    }

    let docker_raw = string_field(&fields, "docker")?;
    let docker =
        ContainerIdentifier::parse(&docker_raw).map_err(|e| schema(format!("docker: {e}")))?;

    let latest_map = mapping_field(&fields, "latest")?;
    if latest_map.len() != 1 {
        return Err(schema(format!(
            "latest must have exactly one tag, found {}",
            latest_map.len()
        )));
    }
    let (tag, digest) = string_pairs("latest", &latest_map)?
        .pop()
        .expect("one entry");
    let latest = LatestTag {
        tag,
        digest: Digest::parse(&digest).map_err(|e| schema(format!("latest: {e}")))?,
    };

    let mut tags = BTreeMap::new();
    for (tag, digest) in string_pairs("tags", &mapping_field(&fields, "tags")?)? {
        let digest = Digest::parse(&digest).map_err(|e| schema(format!("tags.{tag}: {e}")))?;
        tags.insert(tag, digest);
    }

    let mut aliases = AliasSet::new();
    let alias_map = match &fields["aliases"] {
        Value::Null => Mapping::new(),
        _ => mapping_field(&fields, "aliases")?,
    };
    for (name, path) in string_pairs("aliases", &alias_map)? {
        aliases
            .insert(&name, &path)
            .map_err(|e| schema(format!("aliases: {e}")))?;
    }

    let filter = match fields.get("filter") {
        None => None,
        Some(Value::Sequence(items)) => Some(
            items
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    other => Err(schema(format!(
                        "filter items must be strings, got {}",
                        describe(other)
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?,
        ),
        Some(other) => {
            return Err(schema(format!(
                "filter must be a list, got {}",
                describe(other)
            )))
        }
    };

    let entry = RegistryEntry {
        docker,
        url: string_field(&fields, "url")?,
        maintainer: string_field(&fields, "maintainer")?,
        description: string_field(&fields, "description")?,
        latest,
        tags,
        aliases,
        filter,
    };
    entry.validate()?;
    Ok(entry)
}

fn schema(msg: impl Into<String>) -> RecipeError {
    RecipeError::SchemaViolation(msg.into())
}

fn describe(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => format!("boolean {b}"),
        Value::Number(n) => format!("number {n} (quote it to keep it a string)"),
        Value::String(s) => format!("string {s:?}"),
        Value::Sequence(_) => "a list".into(),
        Value::Mapping(_) => "a mapping".into(),
        Value::Tagged(_) => "a tagged value".into(),
    }
}

fn string_field(fields: &BTreeMap<String, Value>, key: &str) -> Result<String, RecipeError> {
    match &fields[key] {
        Value::String(s) => Ok(s.clone()),
        other => Err(schema(format!(
            "{key} must be a string, got {}",
            describe(other)
        ))),
    }
}

fn mapping_field(fields: &BTreeMap<String, Value>, key: &str) -> Result<Mapping, RecipeError> {
    match &fields[key] {
        Value::Mapping(m) => Ok(m.clone()),
        other => Err(schema(format!(
            "{key} must be a mapping, got {}",
            describe(other)
        ))),
    }
}

fn string_pairs(field: &str, map: &Mapping) -> Result<Vec<(String, String)>, RecipeError> {
    map.iter()
        .map(|(k, v)| match (k, v) {
            (Value::String(k), Value::String(v)) => Ok((k.clone(), v.clone())),
            (Value::String(k), other) => Err(schema(format!(
                "{field}.{k} must be a string, got {}",
                describe(other)
            ))),
            (other, _) => Err(schema(format!(
                "{field} keys must be strings, got {}",
                describe(other)
            ))),
        })
        .collect()
}
