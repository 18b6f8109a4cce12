use std::fs;
use std::path::{Component, Path, PathBuf};

use tempfile::TempDir;

const MAX_SYMLINK_HOPS: usize = 40;

/// A reconstructed container root filesystem on the host.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FsTree {
    root: PathBuf,
}

impl FsTree {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Host location of a container path, following symlinks inside the
    /// tree only.
    pub fn resolve(&self, container_path: &str) -> Option<PathBuf> {
        resolve_in_tree(&self.root, Path::new(container_path), true)
    }
}

/// A temporary directory that is removed on drop unless [`ScratchTree::keep`]
/// is called.
#[derive(Debug)]
pub struct ScratchTree {
    dir: TempDir,
}

impl ScratchTree {
    pub fn new() -> std::io::Result<Self> {
        Ok(Self {
            dir: tempfile::Builder::new().prefix("module-forge-").tempdir()?,
        })
    }

    pub fn new_in(parent: &Path) -> std::io::Result<Self> {
        Ok(Self {
            dir: tempfile::Builder::new()
                .prefix("module-forge-")
                .tempdir_in(parent)?,
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Detaches the directory from cleanup and returns its path.
    pub fn keep(self) -> PathBuf {
        self.dir.keep()
    }
}

/// Resolves `path` as if `root` were `/`: absolute symlink targets restart
/// at `root` and `..` never climbs above it. The final component is only
/// followed when `follow_final` is set. Returns `None` on symlink loops.
pub fn resolve_in_tree(root: &Path, path: &Path, follow_final: bool) -> Option<PathBuf> {
    let mut pending: Vec<std::ffi::OsString> = path
        .components()
        .rev()
        .filter_map(|c| match c {
            Component::Normal(s) => Some(s.to_os_string()),
            Component::ParentDir => Some("..".into()),
            _ => None,
        })
        .collect();
    let mut resolved: Vec<std::ffi::OsString> = Vec::new();
    let mut hops = 0;
    while let Some(part) = pending.pop() {
        if part == ".." {
            resolved.pop();
            continue;
        }
        let mut host = root.to_path_buf();
        host.extend(&resolved);
        host.push(&part);
        let is_last = pending.is_empty();
        let link = fs::symlink_metadata(&host)
            .ok()
            .filter(|m| m.file_type().is_symlink())
            .and_then(|_| fs::read_link(&host).ok());
        match link {
            Some(target) if !is_last || follow_final => {
                hops += 1;
                if hops > MAX_SYMLINK_HOPS {
                    return None;
                }
                if target.is_absolute() {
                    resolved.clear();
                }
                for c in target.components().rev() {
                    match c {
                        Component::Normal(s) => pending.push(s.to_os_string()),
                        Component::ParentDir => pending.push("..".into()),
                        _ => {}
                    }
                }
            }
            _ => resolved.push(part),
        }
    }
    let mut out = root.to_path_buf();
    out.extend(&resolved);
    Some(out)
}
