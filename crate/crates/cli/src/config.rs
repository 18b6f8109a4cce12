//! Effective settings: built-in defaults, overlaid by the TOML config file,
//! overlaid by environment variables and flags.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use module_forge_core::alias::Thresholds;
use module_forge_core::inspect::BaseSet;
use module_forge_core::registry::{ClientConfig, PlatformSelector, RegistryClient, RetryPolicy};
use module_forge_core::render::DEFAULT_RUNTIME;

use crate::exit::UsageError;

pub const DEFAULT_WORKERS: usize = 4;

/// Options shared by every subcommand. Each may also come from a
/// `MODULE_FORGE_*` environment variable or the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config file
    #[arg(long, global = true, env = "MODULE_FORGE_CONFIG")]
    pub config: Option<PathBuf>,
    /// Root of the registry tree holding container.yaml entries
    #[arg(long, global = true, env = "MODULE_FORGE_REGISTRY_ROOT")]
    pub registry_root: Option<PathBuf>,
    /// Root of the executable cache
    #[arg(long, global = true, env = "MODULE_FORGE_CACHE_ROOT")]
    pub cache_root: Option<PathBuf>,
    /// Names seen in fewer containers than this are always aliased
    #[arg(long, global = true, env = "MODULE_FORGE_RARE_MAX")]
    pub rare_max: Option<u64>,
    /// Number of additional aliases allowed beyond rare and matching names
    #[arg(long, global = true, env = "MODULE_FORGE_EXTRA_CAP")]
    pub extra_cap: Option<usize>,
    /// Additional aliases must be seen in fewer containers than this
    #[arg(long, global = true, env = "MODULE_FORGE_COMMON_MAX")]
    pub common_max: Option<u64>,
    /// Container runtime command word used in wrappers
    #[arg(long, global = true, env = "MODULE_FORGE_RUNTIME")]
    pub runtime: Option<String>,
    /// Maintainer recorded on new entries
    #[arg(long, global = true, env = "MODULE_FORGE_MAINTAINER")]
    pub maintainer: Option<String>,
    /// Platform to inspect for multi-arch images, as os/arch[/variant]
    #[arg(long, global = true, env = "MODULE_FORGE_ARCH")]
    pub arch: Option<String>,
    /// Tag glob to exclude (repeatable)
    #[arg(
        long = "skip-tag",
        global = true,
        env = "MODULE_FORGE_SKIP_TAGS",
        value_delimiter = ','
    )]
    pub skip_tags: Vec<String>,
    /// Registry endpoint override as host=url (repeatable)
    #[arg(
        long = "registry-url",
        global = true,
        env = "MODULE_FORGE_REGISTRY_URL",
        value_delimiter = ','
    )]
    pub registry_urls: Vec<String>,
    /// Directory of base image executable lists replacing the built-in ones
    #[arg(long, global = true, env = "MODULE_FORGE_BASES_DIR")]
    pub bases_dir: Option<PathBuf>,
    /// Parallel workers for cache and update runs
    #[arg(long, global = true, env = "MODULE_FORGE_WORKERS")]
    pub workers: Option<usize>,
    /// Attempts per registry request
    #[arg(long, global = true, env = "MODULE_FORGE_RETRIES")]
    pub retries: Option<u32>,
    /// First retry delay in milliseconds (doubles per attempt, capped at 8s)
    #[arg(long, global = true, env = "MODULE_FORGE_RETRY_DELAY_MS")]
    pub retry_delay_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    registry_root: Option<PathBuf>,
    cache_root: Option<PathBuf>,
    runtime: Option<String>,
    maintainer: Option<String>,
    arch: Option<String>,
    workers: Option<usize>,
    skip_tags: Option<Vec<String>>,
    bases_dir: Option<PathBuf>,
    retries: Option<u32>,
    retry_delay_ms: Option<u64>,
    thresholds: Option<FileThresholds>,
    endpoints: Option<HashMap<String, String>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileThresholds {
    rare_max: Option<u64>,
    extra_cap: Option<usize>,
    common_max: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub registry_root: PathBuf,
    pub cache_root: PathBuf,
    pub thresholds: Thresholds,
    pub runtime: String,
    pub maintainer: String,
    pub platform: PlatformSelector,
    pub skip_tags: Vec<String>,
    pub endpoints: HashMap<String, String>,
    pub bases_dir: Option<PathBuf>,
    pub workers: usize,
    pub retry: RetryPolicy,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            registry_root: PathBuf::from("registry"),
            cache_root: PathBuf::from("cache"),
            thresholds: Thresholds::default(),
            runtime: DEFAULT_RUNTIME.to_string(),
            maintainer: "@module-forge".to_string(),
            platform: PlatformSelector::default(),
            skip_tags: Vec::new(),
            endpoints: HashMap::new(),
            bases_dir: None,
            workers: DEFAULT_WORKERS,
            retry: RetryPolicy::default(),
        }
    }
}

fn parse_endpoint(raw: &str) -> Result<(String, String)> {
    match raw.split_once('=') {
        Some((host, url))
            if !host.is_empty() && (url.starts_with("http://") || url.starts_with("https://")) =>
        {
            Ok((host.to_string(), url.to_string()))
        }
        _ => Err(UsageError(format!(
            "invalid registry url {raw:?}, expected host=http(s)://..."
        ))
        .into()),
    }
}

impl Config {
    pub fn load(args: &GlobalArgs) -> Result<Self> {
        let mut cfg = Config::default();
        if let Some(path) = &args.config {
            cfg.apply_file(path)?;
        }
        cfg.apply_args(args)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        // Relative paths in the file are relative to the file itself.
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        if let Some(p) = file.registry_root {
            self.registry_root = rel(p);
        }
        if let Some(p) = file.cache_root {
            self.cache_root = rel(p);
        }
        if let Some(p) = file.bases_dir {
            self.bases_dir = Some(rel(p));
        }
        if let Some(v) = file.runtime {
            self.runtime = v;
        }
        if let Some(v) = file.maintainer {
            self.maintainer = v;
        }
        if let Some(v) = file.arch {
            self.platform = v.parse().map_err(UsageError)?;
        }
        if let Some(v) = file.workers {
            self.workers = v;
        }
        if let Some(v) = file.skip_tags {
            self.skip_tags = v;
        }
        if let Some(v) = file.retries {
            self.retry.attempts = v;
        }
        if let Some(v) = file.retry_delay_ms {
            self.retry.initial_delay = Duration::from_millis(v);
        }
        if let Some(t) = file.thresholds {
            self.thresholds.rare_max = t.rare_max.unwrap_or(self.thresholds.rare_max);
            self.thresholds.extra_cap = t.extra_cap.unwrap_or(self.thresholds.extra_cap);
            self.thresholds.common_max = t.common_max.unwrap_or(self.thresholds.common_max);
        }
        if let Some(e) = file.endpoints {
            self.endpoints.extend(e);
        }
        Ok(())
    }

    fn apply_args(&mut self, args: &GlobalArgs) -> Result<()> {
        if let Some(p) = &args.registry_root {
            self.registry_root = p.clone();
        }
        if let Some(p) = &args.cache_root {
            self.cache_root = p.clone();
        }
        if let Some(p) = &args.bases_dir {
            self.bases_dir = Some(p.clone());
        }
        if let Some(v) = &args.runtime {
            self.runtime = v.clone();
        }
        if let Some(v) = &args.maintainer {
            self.maintainer = v.clone();
        }
        if let Some(v) = &args.arch {
            self.platform = v.parse().map_err(UsageError)?;
        }
        if let Some(v) = args.workers {
            self.workers = v;
        }
        if !args.skip_tags.is_empty() {
            self.skip_tags = args.skip_tags.clone();
        }
        if let Some(v) = args.retries {
            self.retry.attempts = v;
        }
        if let Some(v) = args.retry_delay_ms {
            self.retry.initial_delay = Duration::from_millis(v);
        }
        self.thresholds.rare_max = args.rare_max.unwrap_or(self.thresholds.rare_max);
        self.thresholds.extra_cap = args.extra_cap.unwrap_or(self.thresholds.extra_cap);
        self.thresholds.common_max = args.common_max.unwrap_or(self.thresholds.common_max);
        for raw in &args.registry_urls {
            let (host, url) = parse_endpoint(raw)?;
            self.endpoints.insert(host, url);
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let t = &self.thresholds;
        if t.rare_max == 0 || t.extra_cap == 0 || t.common_max == 0 {
            bail!(UsageError("thresholds must be positive".into()));
        }
        if self.workers == 0 {
            bail!(UsageError("workers must be at least 1".into()));
        }
        if self.retry.attempts == 0 {
            bail!(UsageError("retries must be at least 1".into()));
        }
        for url in self.endpoints.values() {
            if !(url.starts_with("http://") || url.starts_with("https://")) {
                bail!(UsageError(format!(
                    "endpoint {url:?} must be an http(s) url"
                )));
            }
        }
        Ok(())
    }

    pub fn client(&self) -> Result<RegistryClient> {
        let config = ClientConfig {
            endpoints: self.endpoints.clone(),
            retry: self.retry.clone(),
            platform: self.platform.clone(),
            ..ClientConfig::default()
        }
        .with_env_token();
        RegistryClient::new(config).context("building registry client")
    }

    pub fn bases(&self) -> Result<Vec<BaseSet>> {
        match &self.bases_dir {
            Some(dir) => BaseSet::load_dir(dir)
                .with_context(|| format!("loading base lists from {}", dir.display())),
            None => Ok(BaseSet::builtin()),
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .context("starting worker pool")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("forge.toml");
        std::fs::write(
            &path,
            "registry_root = \"reg\"\nmaintainer = \"@file\"\nworkers = 2\n[thresholds]\nrare_max = 5\n[endpoints]\n\"quay.io\" = \"http://127.0.0.1:1\"\n",
        )
        .unwrap();
        let args = GlobalArgs {
            config: Some(path),
            maintainer: Some("@flag".into()),
            common_max: Some(50),
            ..Default::default()
        };
        let cfg = Config::load(&args).unwrap();
        assert_eq!(cfg.registry_root, dir.path().join("reg"));
        assert_eq!(cfg.maintainer, "@flag");
        assert_eq!(cfg.workers, 2);
        assert_eq!(
            cfg.thresholds,
            Thresholds {
                rare_max: 5,
                extra_cap: 25,
                common_max: 50
            }
        );
        assert_eq!(cfg.endpoints["quay.io"], "http://127.0.0.1:1");
    }

    #[test]
    fn rejects_bad_values() {
        let zero = GlobalArgs {
            rare_max: Some(0),
            ..Default::default()
        };
        assert!(Config::load(&zero)
            .unwrap_err()
            .downcast_ref::<UsageError>()
            .is_some());
        let url = GlobalArgs {
            registry_urls: vec!["quay.io".into()],
            ..Default::default()
        };
        assert!(Config::load(&url).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "unknown_key = 1\n").unwrap();
        let args = GlobalArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(Config::load(&args).is_err());
    }
}
