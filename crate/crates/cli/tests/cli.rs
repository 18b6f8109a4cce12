use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use assert_cmd::Command;
use module_forge_mock::fixtures::{seed_samtools, seed_tool, SAMTOOLS_BINARIES, SAMTOOLS_REPO};
use module_forge_mock::{ImageSpec, LayerBuilder, MockRegistry};
use tempfile::TempDir;

const SAMTOOLS_ID: &str = "quay.io/biocontainers/samtools";

struct Workspace {
    mock: MockRegistry,
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        Self {
            mock: MockRegistry::start(),
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn registry(&self) -> PathBuf {
        self.dir.path().join("registry")
    }

    fn cache(&self) -> PathBuf {
        self.dir.path().join("cache")
    }

    fn cmd(&self) -> Command {
        self.cmd_with_url(&self.mock.url())
    }

    fn cmd_with_url(&self, url: &str) -> Command {
        let mut cmd = Command::cargo_bin("module-forge").unwrap();
        for (key, _) in std::env::vars() {
            if key.starts_with("MODULE_FORGE_") {
                cmd.env_remove(key);
            }
        }
        cmd.current_dir(self.dir.path())
            .arg("--registry-root")
            .arg(self.registry())
            .arg("--cache-root")
            .arg(self.cache())
            .arg("--registry-url")
            .arg(format!("quay.io={url}"))
            .args(["--retry-delay-ms", "1"]);
        cmd
    }

    fn entry_path(&self, id: &str) -> PathBuf {
        self.registry().join(id).join("container.yaml")
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let path = self.dir.path().join(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn add_samtools(&self) {
        self.cmd()
            .args([
                "add",
                SAMTOOLS_ID,
                "--maintainer",
                "@vsoch",
                "--url",
                "https://www.htslib.org/",
            ])
            .args([
                "--description",
                "Tools for dealing with SAM, BAM and CRAM files",
            ])
            .assert()
            .success();
    }
}

fn stdout_of(assert: &assert_cmd::assert::Assert) -> String {
    String::from_utf8(assert.get_output().stdout.clone()).unwrap()
}

fn golden(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

#[test]
fn add_produces_golden_entry() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    ws.add_samtools();
    assert_eq!(
        fs::read_to_string(ws.entry_path(SAMTOOLS_ID)).unwrap(),
        golden("samtools.container.yaml")
    );
}

#[test]
fn add_refuses_existing_without_force() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    ws.add_samtools();
    ws.cmd().args(["add", SAMTOOLS_ID]).assert().code(2);
    ws.cmd()
        .args(["add", SAMTOOLS_ID, "--force"])
        .assert()
        .success();
}

#[test]
fn add_unreachable_registry_is_network_failure() {
    let ws = Workspace::new();
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let out = ws
        .cmd_with_url(&format!("http://127.0.0.1:{port}"))
        .args(["add", SAMTOOLS_ID])
        .assert()
        .code(3);
    let stderr = String::from_utf8_lossy(&out.get_output().stderr).to_string();
    assert!(stderr.contains("transient"), "{stderr}");
    assert!(!ws.entry_path(SAMTOOLS_ID).exists());
}

#[test]
fn add_unknown_repository_is_usage_failure() {
    let ws = Workspace::new();
    ws.cmd()
        .args(["add", "quay.io/nobody/nothing"])
        .assert()
        .code(2);
}

#[test]
fn add_respects_skip_tags_and_maintainer_env() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    ws.cmd()
        .env("MODULE_FORGE_MAINTAINER", "@env")
        .args(["add", SAMTOOLS_ID, "--skip-tag", "1.16*"])
        .assert()
        .success();
    let text = fs::read_to_string(ws.entry_path(SAMTOOLS_ID)).unwrap();
    assert!(text.contains("maintainer: '@env'"));
    assert!(text.contains("latest:\n  1.15.1--h1170115_0:"));
    assert!(!text.contains("1.16.1"));
}

#[test]
fn add_uses_counts_when_present() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    let mut counts = BTreeMap::new();
    for name in SAMTOOLS_BINARIES {
        counts.insert(name.to_string(), 5000u64);
    }
    let doc = serde_json::json!({"total_containers": 6000, "counts": counts});
    fs::create_dir_all(ws.cache()).unwrap();
    fs::write(
        ws.cache().join("counts.json"),
        serde_json::to_vec(&doc).unwrap(),
    )
    .unwrap();
    ws.cmd().args(["add", SAMTOOLS_ID]).assert().success();
    let text = fs::read_to_string(ws.entry_path(SAMTOOLS_ID)).unwrap();
    // Every name is very common, so only the name-matching ones survive.
    let aliases = text.split("aliases:\n").nth(1).unwrap();
    let names: Vec<&str> = aliases
        .lines()
        .map(|l| l.trim().split(':').next().unwrap())
        .collect();
    assert_eq!(names, ["samtools", "samtools.pl"]);
}

#[test]
fn update_reports_new_tag_and_leaves_unchanged_alone() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    ws.add_samtools();
    let path = ws.entry_path(SAMTOOLS_ID);
    let before = fs::read_to_string(&path).unwrap();
    let mtime = fs::metadata(&path).unwrap().modified().unwrap();

    let out = ws.cmd().args(["update", SAMTOOLS_ID]).assert().success();
    assert_eq!(stdout_of(&out), "");
    assert_eq!(fs::read_to_string(&path).unwrap(), before);
    assert_eq!(fs::metadata(&path).unwrap().modified().unwrap(), mtime);

    let digest = ws.mock.push_image(
        SAMTOOLS_REPO,
        &module_forge_mock::fixtures::samtools_image("1.17--h00cdaf9_0"),
    );
    ws.mock.tag(SAMTOOLS_REPO, "1.17--h00cdaf9_0", &digest);
    let out = ws.cmd().args(["update", SAMTOOLS_ID]).assert().success();
    assert_eq!(
        stdout_of(&out),
        format!(
            "[{SAMTOOLS_ID}]\n+1.17--h00cdaf9_0\nlatest 1.16.1--h6899075_1 -> 1.17--h00cdaf9_0\n"
        )
    );
    let after = fs::read_to_string(&path).unwrap();
    assert!(after.contains(&format!("latest:\n  1.17--h00cdaf9_0: {digest}\n")));
    // Aliases survive the refresh.
    assert_eq!(
        after.split("aliases:").nth(1),
        before.split("aliases:").nth(1)
    );
}

#[test]
fn update_all_with_one_failure_is_partial() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    seed_tool(&ws.mock, "tools/alpha", "1.0", &["alpha"]);
    ws.add_samtools();
    ws.cmd()
        .args(["add", "quay.io/tools/alpha"])
        .assert()
        .success();
    // Third entry whose repository no longer exists upstream.
    let ghost = fs::read_to_string(ws.entry_path("quay.io/tools/alpha"))
        .unwrap()
        .replace("quay.io/tools/alpha", "quay.io/tools/ghost");
    let ghost_path = ws.entry_path("quay.io/tools/ghost");
    fs::create_dir_all(ghost_path.parent().unwrap()).unwrap();
    fs::write(&ghost_path, &ghost).unwrap();

    let d = seed_tool(&ws.mock, "tools/alpha", "1.1", &["alpha"]);
    let digest = ws.mock.push_image(
        SAMTOOLS_REPO,
        &module_forge_mock::fixtures::samtools_image("1.18--h_0"),
    );
    ws.mock.tag(SAMTOOLS_REPO, "1.18--h_0", &digest);

    let out = ws
        .cmd()
        .args(["update", "--all", "--workers", "2"])
        .assert()
        .code(1);
    let stdout = stdout_of(&out);
    assert!(
        stdout.contains("[quay.io/tools/alpha]\n+1.1\nlatest 1.0 -> 1.1\n"),
        "{stdout}"
    );
    assert!(
        stdout.contains(&format!("[{SAMTOOLS_ID}]\n+1.18--h_0\n")),
        "{stdout}"
    );
    assert!(!stdout.contains("ghost"));
    assert_eq!(fs::read_to_string(&ghost_path).unwrap(), ghost);
    assert!(fs::read_to_string(ws.entry_path("quay.io/tools/alpha"))
        .unwrap()
        .contains(&d));
}

#[test]
fn update_due_on_empty_group_is_noop() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    ws.add_samtools();
    ws.mock.clear_requests();
    let out = ws
        .cmd()
        .args(["update", "--due", "2022-11-29"])
        .assert()
        .success();
    assert_eq!(stdout_of(&out), "");
    assert!(ws.mock.requests().is_empty());
    // samtools falls in group 9.
    ws.cmd()
        .args(["update", "--due", "2022-11-09"])
        .assert()
        .success();
    assert!(!ws.mock.requests().is_empty());
}

#[test]
fn update_needs_a_selection() {
    let ws = Workspace::new();
    fs::create_dir_all(ws.registry()).unwrap();
    ws.cmd().arg("update").assert().code(2);
    ws.cmd()
        .args(["update", "quay.io/not/there"])
        .assert()
        .code(1);
}

fn seed_three(ws: &Workspace) -> PathBuf {
    seed_tool(&ws.mock, "t/one", "1.0", &["one", "shared"]);
    seed_tool(&ws.mock, "t/two", "2.0", &["two", "shared"]);
    seed_tool(&ws.mock, "t/three", "3.0", &["three", "shared", "one"]);
    ws.write(
        "ids.txt",
        "# tools\nquay.io/t/one\nquay.io/t/two\n\nquay.io/t/three # last\n",
    )
}

fn brute_force_counts(cache: &Path) -> (u64, BTreeMap<String, u64>) {
    let mut total = 0;
    let mut counts = BTreeMap::new();
    for entry in walkdir::WalkDir::new(cache) {
        let entry = entry.unwrap();
        if entry.file_name() != "binaries.json" {
            continue;
        }
        total += 1;
        let doc: serde_json::Value =
            serde_json::from_slice(&fs::read(entry.path()).unwrap()).unwrap();
        for name in doc["executables"].as_object().unwrap().keys() {
            *counts.entry(name.clone()).or_insert(0) += 1;
        }
    }
    (total, counts)
}

#[test]
fn cache_add_is_resumable_and_counts_match_recount() {
    let ws = Workspace::new();
    let list = seed_three(&ws);
    let out = ws
        .cmd()
        .arg("cache")
        .arg("add")
        .arg(&list)
        .assert()
        .success();
    assert_eq!(stdout_of(&out), "added 3 skipped 0 failed 0\n");
    for id in ["quay.io/t/one", "quay.io/t/two", "quay.io/t/three"] {
        assert!(ws.cache().join(id).join("binaries.json").exists(), "{id}");
    }

    ws.mock.clear_requests();
    let out = ws
        .cmd()
        .arg("cache")
        .arg("add")
        .arg(&list)
        .assert()
        .success();
    assert_eq!(stdout_of(&out), "added 0 skipped 3 failed 0\n");
    assert!(ws.mock.requests().is_empty());

    let out = ws
        .cmd()
        .arg("cache")
        .arg("add")
        .arg(&list)
        .arg("--refresh")
        .assert()
        .success();
    assert_eq!(stdout_of(&out), "added 3 skipped 0 failed 0\n");

    ws.cmd().args(["cache", "counts"]).assert().success();
    let doc: serde_json::Value =
        serde_json::from_slice(&fs::read(ws.cache().join("counts.json")).unwrap()).unwrap();
    let (total, counts) = brute_force_counts(&ws.cache());
    assert_eq!(doc["total_containers"], total);
    let got: BTreeMap<String, u64> = serde_json::from_value(doc["counts"].clone()).unwrap();
    assert_eq!(got, counts);
    assert_eq!(got["shared"], 3);
    assert_eq!(got["one"], 2);
}

#[test]
fn cache_add_partial_failure() {
    let ws = Workspace::new();
    seed_tool(&ws.mock, "t/one", "1.0", &["one"]);
    let list = ws.write("ids.txt", "quay.io/t/one\nquay.io/t/missing\n");
    let out = ws.cmd().arg("cache").arg("add").arg(&list).assert().code(1);
    assert_eq!(stdout_of(&out), "added 1 skipped 0 failed 1\n");
    let bad = ws.write("bad.txt", "Not An Id\n");
    ws.cmd().arg("cache").arg("add").arg(&bad).assert().code(2);
}

#[test]
fn export_empty_and_populated() {
    let ws = Workspace::new();
    fs::create_dir_all(ws.registry()).unwrap();
    let api = ws.dir.path().join("api");
    ws.cmd()
        .arg("export")
        .arg("--out")
        .arg(&api)
        .assert()
        .success();
    assert_eq!(
        fs::read_to_string(api.join("library.json")).unwrap(),
        "[]\n"
    );

    seed_samtools(&ws.mock);
    ws.add_samtools();
    ws.cmd()
        .arg("export")
        .arg("--out")
        .arg(&api)
        .assert()
        .success();
    let library = fs::read_to_string(api.join("library.json")).unwrap();
    assert!(library.contains("\"latest\": \"1.16.1--h6899075_1\""));
    assert!(api.join(SAMTOOLS_ID).join("container.json").exists());
}

#[test]
fn groups_listing_and_due() {
    let ws = Workspace::new();
    let list = ws.write("ids.txt", "quay.io/biocontainers/samtools\nquay.io/a/b\n");
    let out = ws
        .cmd()
        .arg("groups")
        .arg("--due")
        .arg("2022-11-29")
        .arg("--list")
        .arg(&list)
        .assert()
        .success();
    assert_eq!(stdout_of(&out), "");
    let out = ws
        .cmd()
        .arg("groups")
        .arg("--due")
        .arg("2023-01-09")
        .arg("--list")
        .arg(&list)
        .assert()
        .success();
    assert_eq!(stdout_of(&out), format!("{SAMTOOLS_ID}\n"));
    let out = ws
        .cmd()
        .arg("groups")
        .arg("--list")
        .arg(&list)
        .assert()
        .success();
    let stdout = stdout_of(&out);
    assert!(stdout.contains(&format!("09 {SAMTOOLS_ID}\n")), "{stdout}");
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn render_matches_renderer_golden() {
    let ws = Workspace::new();
    let core_fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let entry = ws.entry_path(SAMTOOLS_ID);
    fs::create_dir_all(entry.parent().unwrap()).unwrap();
    fs::copy(core_fixtures.join("recipe/samtools.golden.yaml"), &entry).unwrap();

    for (dialect, file) in [
        ("lua", "samtools.module.lua"),
        ("tcl", "samtools.module.tcl"),
    ] {
        let out = ws
            .cmd()
            .args(["render", SAMTOOLS_ID, "--dialect", dialect])
            .assert()
            .success();
        assert_eq!(
            stdout_of(&out),
            fs::read_to_string(core_fixtures.join("render").join(file)).unwrap()
        );
    }

    let modules = ws.dir.path().join("modules");
    let out = ws
        .cmd()
        .args([
            "render",
            SAMTOOLS_ID,
            "--pin-tag",
            "--bind",
            "/data:/data",
            "--option",
            "--cleanenv",
            "--out",
        ])
        .arg(&modules)
        .assert()
        .success();
    let written = PathBuf::from(stdout_of(&out).trim());
    assert_eq!(
        written,
        modules
            .join(SAMTOOLS_ID)
            .join("1.16.1--h6899075_1/module.lua")
    );
    let text = fs::read_to_string(written).unwrap();
    assert!(text.contains(
        "singularity exec --cleanenv -B /data:/data docker://quay.io/biocontainers/samtools:1.16.1--h6899075_1 /usr/local/bin/samtools \"$@\""
    ));

    ws.cmd()
        .args(["render", SAMTOOLS_ID, "--tag", "0.0.1"])
        .assert()
        .code(2);
    ws.cmd()
        .args(["render", SAMTOOLS_ID, "--bind", "relative:/x"])
        .assert()
        .code(2);
    ws.cmd()
        .args(["render", "quay.io/not/there"])
        .assert()
        .code(2);
}

#[test]
fn config_file_is_honoured() {
    let ws = Workspace::new();
    seed_samtools(&ws.mock);
    let config = ws.write(
        "forge.toml",
        &format!(
            "maintainer = \"@from-file\"\nskip_tags = [\"1.16*\"]\n[endpoints]\n\"quay.io\" = \"{}\"\n",
            ws.mock.url()
        ),
    );
    let mut cmd = Command::cargo_bin("module-forge").unwrap();
    cmd.env_remove("MODULE_FORGE_MAINTAINER")
        .arg("--config")
        .arg(&config)
        .arg("--registry-root")
        .arg(ws.registry())
        .arg("--cache-root")
        .arg(ws.cache())
        .args(["add", SAMTOOLS_ID])
        .assert()
        .success();
    let text = fs::read_to_string(ws.entry_path(SAMTOOLS_ID)).unwrap();
    assert!(text.contains("maintainer: '@from-file'"));
    assert!(!text.contains("1.16.1"));
}

#[test]
fn multi_arch_respects_arch_flag() {
    let ws = Workspace::new();
    let amd = ImageSpec::new(&["PATH=/opt/bin"])
        .layer(LayerBuilder::new().exe("opt/bin/amdtool").into_tar());
    let arm = ImageSpec::new(&["PATH=/opt/bin"])
        .layer(LayerBuilder::new().exe("opt/bin/armtool").into_tar());
    let index = ws.mock.push_index(
        "multi/tool",
        &[("linux", "amd64", &amd), ("linux", "arm64", &arm)],
    );
    ws.mock.tag("multi/tool", "1.0", &index);
    ws.cmd()
        .args(["add", "quay.io/multi/tool"])
        .assert()
        .success();
    assert!(fs::read_to_string(ws.entry_path("quay.io/multi/tool"))
        .unwrap()
        .contains("amdtool: /opt/bin/amdtool"));
    ws.cmd()
        .args([
            "add",
            "quay.io/multi/tool",
            "--force",
            "--arch",
            "linux/arm64",
        ])
        .assert()
        .success();
    assert!(fs::read_to_string(ws.entry_path("quay.io/multi/tool"))
        .unwrap()
        .contains("armtool: /opt/bin/armtool"));
}

#[test]
fn usage_errors_exit_2() {
    let ws = Workspace::new();
    ws.cmd().arg("bogus").assert().code(2);
    ws.cmd().args(["add", "not-an-identifier"]).assert().code(2);
    ws.cmd()
        .args(["add", SAMTOOLS_ID, "--rare-max", "0"])
        .assert()
        .code(2);
}
