//! Builders for test images: layer tarballs and config documents.

use std::io::Write;

use flate2::write::GzEncoder;
use flate2::Compression;
use tar::{EntryType, Header};

/// Accumulates tar entries for one layer.
pub struct LayerBuilder {
    builder: tar::Builder<Vec<u8>>,
}

impl Default for LayerBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn header(kind: EntryType, mode: u32, size: u64) -> Header {
    let mut header = Header::new_gnu();
    header.set_entry_type(kind);
    header.set_mode(mode);
    header.set_size(size);
    header.set_mtime(0);
    header.set_uid(0);
    header.set_gid(0);
    header
}

impl LayerBuilder {
    pub fn new() -> Self {
        Self {
            builder: tar::Builder::new(Vec::new()),
        }
    }

    pub fn dir(mut self, path: &str) -> Self {
        let mut h = header(EntryType::Directory, 0o755, 0);
        self.builder
            .append_data(&mut h, path, std::io::empty())
            .unwrap();
        self
    }

    pub fn file(mut self, path: &str, mode: u32, contents: &[u8]) -> Self {
        let mut h = header(EntryType::Regular, mode, contents.len() as u64);
        self.builder.append_data(&mut h, path, contents).unwrap();
        self
    }

    /// Executable file with a small shell-script body.
    pub fn exe(self, path: &str) -> Self {
        let body = format!("#!/bin/sh\necho {path}\n");
        self.file(path, 0o755, body.as_bytes())
    }

    pub fn symlink(mut self, path: &str, target: &str) -> Self {
        let mut h = header(EntryType::Symlink, 0o777, 0);
        self.builder.append_link(&mut h, path, target).unwrap();
        self
    }

    pub fn hardlink(mut self, path: &str, target: &str) -> Self {
        let mut h = header(EntryType::Link, 0o644, 0);
        self.builder.append_link(&mut h, path, target).unwrap();
        self
    }

    /// Whiteout marker deleting `path` from lower layers.
    pub fn whiteout(self, path: &str) -> Self {
        let (parent, name) = match path.rsplit_once('/') {
            Some((parent, name)) => (format!("{parent}/"), name),
            None => (String::new(), path),
        };
        self.file(&format!("{parent}.wh.{name}"), 0o644, b"")
    }

    /// Opaque marker clearing lower-layer contents of `dir`.
    pub fn opaque(self, dir: &str) -> Self {
        let dir = dir.trim_end_matches('/');
        self.file(&format!("{dir}/.wh..wh..opq"), 0o644, b"")
    }

    /// Appends an entry whose name is written verbatim, bypassing the tar
    /// crate's path sanitizing. Used for traversal cases.
    pub fn raw_entry(mut self, name: &str, contents: &[u8]) -> Self {
        let mut h = header(EntryType::Regular, 0o755, contents.len() as u64);
        {
            let gnu = h.as_gnu_mut().unwrap();
            let bytes = name.as_bytes();
            assert!(bytes.len() < gnu.name.len(), "raw entry name too long");
            gnu.name = [0; 100];
            gnu.name[..bytes.len()].copy_from_slice(bytes);
        }
        h.set_cksum();
        self.builder.append(&h, contents).unwrap();
        self
    }

    pub fn into_tar(self) -> Vec<u8> {
        self.builder.into_inner().unwrap()
    }

    pub fn into_tar_gz(self) -> Vec<u8> {
        let tar = self.into_tar();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&tar).unwrap();
        enc.finish().unwrap()
    }
}

/// An image to push: environment, optional entrypoint and compressed layers.
#[derive(Debug, Clone, Default)]
pub struct ImageSpec {
    pub env: Vec<String>,
    pub entrypoint: Option<Vec<String>>,
    pub cmd: Option<Vec<String>>,
    /// Layer blobs, base first.
    pub layers: Vec<Vec<u8>>,
}

impl ImageSpec {
    pub fn new(env: &[&str]) -> Self {
        Self {
            env: env.iter().map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn layer(mut self, blob: Vec<u8>) -> Self {
        self.layers.push(blob);
        self
    }

    pub fn config_json(&self) -> Vec<u8> {
        let diff_ids: Vec<String> = self
            .layers
            .iter()
            .map(|l| crate::sha256_digest(l))
            .collect();
        let mut config = serde_json::json!({"Env": self.env});
        if let Some(ep) = &self.entrypoint {
            config["Entrypoint"] = serde_json::json!(ep);
        }
        if let Some(cmd) = &self.cmd {
            config["Cmd"] = serde_json::json!(cmd);
        }
        serde_json::to_vec(&serde_json::json!({
            "architecture": "amd64",
            "os": "linux",
            "config": config,
            "rootfs": {"type": "layers", "diff_ids": diff_ids},
        }))
        .unwrap()
    }
}
