//! Static JSON rendering of a registry tree, for hosting as a read-only API.

use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use super::{entry_files, load_entry, RecipeError, RegistryEntry};
use crate::fsutil::write_atomic;

pub const LIBRARY_FILE: &str = "library.json";
pub const ENTRY_JSON: &str = "container.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportSummary {
    pub entries: usize,
    pub files: Vec<PathBuf>,
}

fn entry_document(entry: &RegistryEntry) -> Value {
    // Arrays keep tag order stable and meaningful; JSON objects would not.
    let tags: Vec<Value> = entry
        .sorted_tags()
        .into_iter()
        .map(|(tag, digest)| json!({"tag": tag, "digest": digest.as_str()}))
        .collect();
    let aliases: Map<String, Value> = entry
        .aliases
        .iter()
        .map(|(n, p)| (n.to_string(), Value::String(p.to_string())))
        .collect();
    let mut doc = json!({
        "docker": entry.docker.to_string(),
        "url": entry.url,
        "maintainer": entry.maintainer,
        "description": entry.description,
        "latest": {"tag": entry.latest.tag, "digest": entry.latest.digest.as_str()},
        "tags": tags,
        "aliases": aliases,
    });
    if let Some(filter) = &entry.filter {
        doc["filter"] = json!(filter);
    }
    doc
}

fn render(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("json value serializes");
    bytes.push(b'\n');
    bytes
}

/// Writes `library.json` plus `<identifier>/container.json` per entry.
/// Re-exporting an unchanged registry produces identical bytes.
pub fn export_static_api(
    registry_root: &Path,
    out_dir: &Path,
) -> Result<ExportSummary, RecipeError> {
    let mut entries = Vec::new();
    for path in entry_files(registry_root)? {
        entries.push(load_entry(&path)?);
    }
    entries.sort_by(|a, b| a.docker.cmp(&b.docker));

    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RecipeError::Io { path, source }
    };
    let mut files = Vec::with_capacity(entries.len() + 1);
    let library: Vec<Value> = entries
        .iter()
        .map(|e| json!({"name": e.docker.to_string(), "latest": e.latest.tag}))
        .collect();
    let library_path = out_dir.join(LIBRARY_FILE);
    write_atomic(&library_path, &render(&Value::Array(library))).map_err(io_err(&library_path))?;
    files.push(library_path);

    for entry in &entries {
        let path = out_dir.join(entry.docker.relative_path()).join(ENTRY_JSON);
        write_atomic(&path, &render(&entry_document(entry))).map_err(io_err(&path))?;
        files.push(path);
    }
    Ok(ExportSummary {
        entries: entries.len(),
        files,
    })
}
