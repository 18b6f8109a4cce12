//! Ready-made repositories shared by the CLI tests and the acceptance run.

use crate::{ImageSpec, LayerBuilder, MockRegistry};

pub const SAMTOOLS_REPO: &str = "biocontainers/samtools";
pub const SAMTOOLS_TAGS: [&str; 3] = [
    "1.9--h10a08f8_12",
    "1.15.1--h1170115_0",
    "1.16.1--h6899075_1",
];
pub const SAMTOOLS_LATEST: &str = "1.16.1--h6899075_1";
/// Executables the tool layer adds on PATH.
pub const SAMTOOLS_BINARIES: [&str; 6] = [
    "ace2sam",
    "blast2sam.pl",
    "plot-bamstats",
    "samtools",
    "samtools.pl",
    "wgsim",
];
pub const DEFAULT_PATH_ENV: &str =
    "PATH=/usr/local/sbin:/usr/local/bin:/usr/sbin:/usr/bin:/sbin:/bin";

/// Minimal OS layer: common tools that base-image diffing should remove.
pub fn base_layer() -> Vec<u8> {
    LayerBuilder::new()
        .dir("bin")
        .exe("bin/sh")
        .exe("bin/ls")
        .exe("bin/cat")
        .dir("usr")
        .dir("usr/bin")
        .exe("usr/bin/env")
        .dir("etc")
        .file("etc/os-release", 0o644, b"ID=fixture\n")
        .into_tar()
}

/// Tool layer for one samtools build. `version` changes the layer bytes
/// so every tag gets its own digest.
pub fn samtools_layer(version: &str) -> Vec<u8> {
    LayerBuilder::new()
        .dir("usr/local")
        .dir("usr/local/bin")
        .exe("usr/local/bin/samtools")
        .exe("usr/local/bin/ace2sam")
        .exe("usr/local/bin/blast2sam.pl")
        .exe("usr/local/bin/plot-bamstats")
        .exe("usr/local/bin/wgsim")
        .symlink("usr/local/bin/samtools.pl", "samtools")
        .file("usr/local/bin/README", 0o644, b"not executable\n")
        .dir("usr/local/share")
        .file("usr/local/share/VERSION", 0o644, version.as_bytes())
        .into_tar()
}

pub fn samtools_image(version: &str) -> ImageSpec {
    ImageSpec::new(&[DEFAULT_PATH_ENV])
        .layer(base_layer())
        .layer(samtools_layer(version))
}

/// Pushes the three samtools builds plus a `latest` tag pointing at the
/// newest. Returns the manifest digest per version tag.
pub fn seed_samtools(mock: &MockRegistry) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for tag in SAMTOOLS_TAGS {
        let digest = mock.push_image(SAMTOOLS_REPO, &samtools_image(tag));
        mock.tag(SAMTOOLS_REPO, tag, &digest);
        if tag == SAMTOOLS_LATEST {
            mock.tag(SAMTOOLS_REPO, "latest", &digest);
        }
        out.push((tag.to_string(), digest));
    }
    out
}

/// A small single-tag tool image whose PATH holds `binaries`.
pub fn seed_tool(mock: &MockRegistry, repo: &str, tag: &str, binaries: &[&str]) -> String {
    let mut layer = LayerBuilder::new().dir("opt").dir("opt/bin");
    for b in binaries {
        layer = layer.exe(&format!("opt/bin/{b}"));
    }
    let spec = ImageSpec::new(&["PATH=/opt/bin:/usr/bin:/bin"])
        .layer(base_layer())
        .layer(layer.into_tar());
    let digest = mock.push_image(repo, &spec);
    mock.tag(repo, tag, &digest);
    digest
}
