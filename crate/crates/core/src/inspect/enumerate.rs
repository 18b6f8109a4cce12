use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use super::tree::{resolve_in_tree, FsTree};
use super::{ExecutableListing, PathDirs};
use crate::identifier::ContainerIdentifier;

/// Lists executables in each PATH directory, first directory winning on
/// duplicate basenames. Symlinks count when their in-tree target is an
/// executable regular file; the reported path is always the PATH location.
pub fn enumerate_executables(
    tree: &FsTree,
    dirs: &PathDirs,
    identifier: &ContainerIdentifier,
) -> ExecutableListing {
    let mut listing = ExecutableListing::new(identifier.clone());
    for dir in dirs.dirs() {
        let Some(host_dir) = resolve_in_tree(tree.root(), Path::new(dir), true) else {
            continue;
        };
        let Ok(read) = fs::read_dir(&host_dir) else {
            continue;
        };
        let mut names: Vec<String> = read
            .filter_map(Result::ok)
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        let prefix = dir.trim_end_matches('/');
        for name in names {
            if listing.entries.contains_key(&name) {
                continue;
            }
            let container_path = format!("{prefix}/{name}");
            if is_executable(tree.root(), &container_path) {
                listing.entries.insert(name, container_path);
            }
        }
    }
    listing
}

fn is_executable(root: &Path, container_path: &str) -> bool {
    let Some(host) = resolve_in_tree(root, Path::new(container_path), true) else {
        return false;
    };
    match fs::symlink_metadata(&host) {
        Ok(meta) => meta.is_file() && meta.permissions().mode() & 0o111 != 0,
        Err(_) => false,
    }
}
