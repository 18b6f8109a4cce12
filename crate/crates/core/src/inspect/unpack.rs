//! Layer application with OCI whiteout semantics.
//!
//! Each layer is read twice: the first pass applies its whiteouts to the
//! tree built from lower layers, the second extracts its regular entries.
//! Whiteouts therefore never delete content from their own layer,
//! regardless of entry order inside the tar.

use std::fs::{self, File};
use std::io::{self, BufReader, Read};
use std::os::unix::fs::{symlink, PermissionsExt};
use std::path::{Component, Path, PathBuf};

use flate2::read::GzDecoder;
use tar::{Archive, EntryType};
use thiserror::Error;
use tracing::debug;

use super::tree::{resolve_in_tree, FsTree};

const WHITEOUT_PREFIX: &str = ".wh.";
const OPAQUE_MARKER: &str = ".wh..wh..opq";

#[derive(Debug, Error)]
pub enum UnpackError {
    #[error("malformed layer archive {layer}: {reason}")]
    MalformedArchive { layer: PathBuf, reason: String },
    #[error("layer {layer}: entry {entry:?} escapes the extraction root")]
    PathTraversal { layer: PathBuf, entry: String },
    #[error("extraction directory {0} is not empty")]
    DestinationNotEmpty(PathBuf),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Applies `layers` (base first, gzip or plain tar) onto the empty `dest`.
pub fn unpack_layers<P: AsRef<Path>>(layers: &[P], dest: &Path) -> Result<FsTree, UnpackError> {
    fs::create_dir_all(dest)?;
    if fs::read_dir(dest)?.next().is_some() {
        return Err(UnpackError::DestinationNotEmpty(dest.to_path_buf()));
    }
    for layer in layers {
        let layer = layer.as_ref();
        debug!(layer = %layer.display(), "applying layer");
        apply_whiteouts(layer, dest)?;
        extract_entries(layer, dest)?;
    }
    Ok(FsTree::new(dest))
}

fn open_layer(path: &Path) -> io::Result<Box<dyn Read>> {
    let mut file = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let head = io::Cursor::new(magic[..n].to_vec());
    let chained = head.chain(file);
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(chained)))
    } else {
        Ok(Box::new(chained))
    }
}

/// Normalizes an archive path to components relative to the root,
/// rejecting any `..` that would leave it.
fn normalize(layer: &Path, raw: &Path) -> Result<Vec<String>, UnpackError> {
    let mut out: Vec<String> = Vec::new();
    for c in raw.components() {
        match c {
            Component::Normal(s) => out.push(s.to_str().map(str::to_string).ok_or_else(|| {
                UnpackError::MalformedArchive {
                    layer: layer.to_path_buf(),
                    reason: format!("non-UTF-8 entry name {raw:?}"),
                }
            })?),
            Component::CurDir | Component::RootDir => {}
            Component::ParentDir => {
                if out.pop().is_none() {
                    return Err(UnpackError::PathTraversal {
                        layer: layer.to_path_buf(),
                        entry: raw.display().to_string(),
                    });
                }
            }
            Component::Prefix(_) => {
                return Err(UnpackError::PathTraversal {
                    layer: layer.to_path_buf(),
                    entry: raw.display().to_string(),
                })
            }
        }
    }
    Ok(out)
}

fn malformed(layer: &Path, e: impl std::fmt::Display) -> UnpackError {
    UnpackError::MalformedArchive {
        layer: layer.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Host directory that holds `parts`' final component; parents are
/// resolved through in-tree symlinks.
fn host_parent(root: &Path, parts: &[String]) -> Option<PathBuf> {
    let parent: PathBuf = parts[..parts.len() - 1].iter().collect();
    resolve_in_tree(root, &parent, true)
}

fn remove_any(path: &Path) -> io::Result<()> {
    match fs::symlink_metadata(path) {
        Ok(meta) if meta.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(e),
    }
}

fn clear_dir(dir: &Path) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        remove_any(&entry?.path())?;
    }
    Ok(())
}

fn apply_whiteouts(layer: &Path, root: &Path) -> Result<(), UnpackError> {
    let mut archive = Archive::new(open_layer(layer)?);
    for entry in archive.entries().map_err(|e| malformed(layer, e))? {
        let entry = entry.map_err(|e| malformed(layer, e))?;
        let raw = entry.path().map_err(|e| malformed(layer, e))?.into_owned();
        let parts = normalize(layer, &raw)?;
        let Some(name) = parts.last() else { continue };
        if !name.starts_with(WHITEOUT_PREFIX) {
            continue;
        }
        let Some(parent) = host_parent(root, &parts) else {
            continue;
        };
        if !parent.starts_with(root) || !parent.is_dir() {
            continue;
        }
        if name == OPAQUE_MARKER {
            clear_dir(&parent)?;
        } else {
            let target = &name[WHITEOUT_PREFIX.len()..];
            if target.is_empty() || target == "." || target == ".." {
                return Err(malformed(layer, format!("bad whiteout {raw:?}")));
            }
            remove_any(&parent.join(target))?;
        }
    }
    Ok(())
}

fn extract_entries(layer: &Path, root: &Path) -> Result<(), UnpackError> {
    let mut archive = Archive::new(open_layer(layer)?);
    for entry in archive.entries().map_err(|e| malformed(layer, e))? {
        let mut entry = entry.map_err(|e| malformed(layer, e))?;
        let raw = entry.path().map_err(|e| malformed(layer, e))?.into_owned();
        let parts = normalize(layer, &raw)?;
        let Some(name) = parts.last().cloned() else {
            continue;
        };
        if name.starts_with(WHITEOUT_PREFIX) {
            continue;
        }
        let parent = host_parent(root, &parts)
            .ok_or_else(|| malformed(layer, format!("symlink loop above {raw:?}")))?;
        fs::create_dir_all(&parent)?;
        let target = parent.join(&name);
        let mode = entry.header().mode().map_err(|e| malformed(layer, e))? & 0o777;

        match entry.header().entry_type() {
            EntryType::Directory => {
                if fs::symlink_metadata(&target).is_ok_and(|m| !m.is_dir()) {
                    remove_any(&target)?;
                }
                fs::create_dir_all(&target)?;
                fs::set_permissions(&target, fs::Permissions::from_mode(mode | 0o700))?;
            }
            EntryType::Regular | EntryType::Continuous => {
                remove_any(&target)?;
                let mut out = File::create(&target)?;
                io::copy(&mut entry, &mut out).map_err(|e| malformed(layer, e))?;
                fs::set_permissions(&target, fs::Permissions::from_mode(mode | 0o600))?;
            }
            EntryType::Symlink => {
                let link = entry
                    .link_name()
                    .map_err(|e| malformed(layer, e))?
                    .ok_or_else(|| malformed(layer, format!("symlink {raw:?} without target")))?;
                remove_any(&target)?;
                symlink(&*link, &target)?;
            }
            EntryType::Link => {
                let link = entry
                    .link_name()
                    .map_err(|e| malformed(layer, e))?
                    .ok_or_else(|| malformed(layer, format!("hard link {raw:?} without target")))?;
                let link_parts = normalize(layer, &link)?;
                let link_path: PathBuf = link_parts.iter().collect();
                let source = resolve_in_tree(root, &link_path, true)
                    .filter(|p| p.is_file())
                    .ok_or_else(|| {
                        malformed(layer, format!("hard link {raw:?} to missing {link:?}"))
                    })?;
                if source != target {
                    remove_any(&target)?;
                    fs::copy(&source, &target)?;
                }
            }
            other => {
                debug!(entry = %raw.display(), ?other, "skipping special entry");
            }
        }
    }
    Ok(())
}
