//! Registry-to-listing steps shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use tracing::{debug, info, warn};

use module_forge_core::inspect::{
    enumerate_executables, extract_path_dirs, unpack_layers, ExecutableListing, ScratchTree,
};
use module_forge_core::registry::{ManifestRef, RegistryClient, RegistryError};
use module_forge_core::tags::{filter_tags, sort_and_select, TagOrdering};
use module_forge_core::{ContainerIdentifier, Digest};

use crate::exit::UsageError;

/// Filtered, ordered tags and the manifest each one resolves to.
#[derive(Debug, Clone)]
pub struct TagData {
    pub ordering: TagOrdering,
    pub refs: BTreeMap<String, ManifestRef>,
}

impl TagData {
    pub fn digests(&self) -> BTreeMap<String, Digest> {
        self.refs
            .iter()
            .map(|(t, r)| (t.clone(), r.digest.clone()))
            .collect()
    }
}

pub fn ordered_tags(
    client: &RegistryClient,
    id: &ContainerIdentifier,
    skip: &[String],
) -> Result<TagOrdering> {
    let list = client
        .list_tags(id)
        .with_context(|| format!("listing tags of {id}"))?;
    let kept = filter_tags(&list, skip).map_err(|e| UsageError(e.to_string()))?;
    debug!(%id, listed = list.tags.len(), kept = kept.len(), "tags filtered");
    Ok(sort_and_select(kept))
}

/// Lists, filters and orders tags, then resolves each kept tag. Tags that
/// vanish between listing and resolution are skipped.
pub fn fetch_tag_data(
    client: &RegistryClient,
    id: &ContainerIdentifier,
    skip: &[String],
) -> Result<TagData> {
    let ordering = ordered_tags(client, id, skip)?;
    let mut refs = BTreeMap::new();
    for candidate in &ordering.ordered {
        match client.resolve_digest(id, &candidate.raw) {
            Ok(r) => {
                refs.insert(candidate.raw.clone(), r);
            }
            Err(RegistryError::NotFound(msg)) => {
                warn!(%id, tag = %candidate.raw, %msg, "tag disappeared, skipping")
            }
            Err(e) => return Err(e).with_context(|| format!("resolving {id}:{}", candidate.raw)),
        }
    }
    Ok(TagData { ordering, refs })
}

/// The tag treated as latest: the ordering's pick, else the greatest raw tag.
pub fn latest_tag_name(ordering: &TagOrdering) -> Option<String> {
    ordering
        .latest
        .as_ref()
        .map(|c| c.raw.clone())
        .or_else(|| ordering.ordered.iter().map(|c| c.raw.clone()).max())
}

/// Downloads and unpacks the image behind `reference`, then lists the
/// executables on its PATH.
pub fn inspect_image(
    client: &RegistryClient,
    id: &ContainerIdentifier,
    reference: &ManifestRef,
) -> Result<ExecutableListing> {
    let config = client
        .fetch_image_config(id, reference)
        .with_context(|| format!("fetching image config of {id}@{}", reference.digest))?;
    let scratch = ScratchTree::new().context("creating scratch directory")?;
    let layer_dir = scratch.path().join("layers");
    std::fs::create_dir_all(&layer_dir).context("creating layer directory")?;
    let mut layers = Vec::with_capacity(config.layer_digests.len());
    for (i, digest) in config.layer_digests.iter().enumerate() {
        let path = layer_dir.join(format!("{i:04}-{}", digest.hex()));
        let size = client
            .fetch_layer_to_file(id, digest, &path)
            .with_context(|| format!("fetching layer {digest} of {id}"))?;
        debug!(%id, %digest, size, "layer downloaded");
        layers.push(path);
    }
    let rootfs = scratch.path().join("rootfs");
    let tree =
        unpack_layers(&layers, &rootfs).with_context(|| format!("unpacking layers of {id}"))?;
    let dirs = extract_path_dirs(&config);
    let listing = enumerate_executables(&tree, &dirs, id);
    info!(%id, executables = listing.len(), "image inspected");
    Ok(listing)
}

/// Reads a newline-delimited identifier list; `#` starts a comment.
/// Duplicates are dropped with a warning.
pub fn read_id_list(path: &Path) -> Result<Vec<ContainerIdentifier>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        UsageError(format!(
            "cannot read identifier list {}: {e}",
            path.display()
        ))
    })?;
    parse_id_list(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())).into())
}

pub fn parse_id_list(text: &str) -> Result<Vec<ContainerIdentifier>, String> {
    let mut seen = std::collections::HashSet::new();
    let mut ids = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = ContainerIdentifier::parse(line).map_err(|e| format!("line {}: {e}", n + 1))?;
        if seen.insert(id.clone()) {
            ids.push(id);
        } else {
            warn!(%id, "duplicate identifier in list");
        }
    }
    Ok(ids)
}
