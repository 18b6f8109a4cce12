use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::NaiveDate;
use rayon::prelude::*;
use tracing::{error, info, warn};

use module_forge_core::alias::{select_aliases, AliasSet};
use module_forge_core::cache::{load_counts, CacheStore};
use module_forge_core::inspect::diff_against_bases;
use module_forge_core::recipe::{
    build_entry, entry_files, entry_path, export_static_api, load_entry, update_entry, write_entry,
    EntryDelta, EntryMeta, RecipeError, RegistryEntry, ENTRY_FILE,
};
use module_forge_core::render::{
    render_modulefile, write_modulefile, Bind, Dialect, RenderContext,
};
use module_forge_core::scheduler::{due_on, partition};
use module_forge_core::ContainerIdentifier;

use crate::config::Config;
use crate::exit::{is_network, BatchFailure, UsageError};
use crate::pipeline::{fetch_tag_data, inspect_image, latest_tag_name, ordered_tags, read_id_list};

fn usage_on_no_tags(e: RecipeError) -> anyhow::Error {
    match e {
        RecipeError::NoTags(id) => UsageError(format!("{id} has no usable tags")).into(),
        other => other.into(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct AddOptions {
    pub force: bool,
    pub url: Option<String>,
    pub description: Option<String>,
}

/// Generates a new entry for `id` and writes it into the registry.
pub fn cmd_add(cfg: &Config, id: &ContainerIdentifier, opts: &AddOptions) -> Result<PathBuf> {
    let path = entry_path(&cfg.registry_root, id);
    if path.exists() && !opts.force {
        return Err(UsageError(format!(
            "{} already exists (use --force to regenerate)",
            path.display()
        ))
        .into());
    }
    let client = cfg.client()?;
    let bases = cfg.bases()?;
    let data = fetch_tag_data(&client, id, &cfg.skip_tags)?;

    let mut meta = EntryMeta::placeholder(id, &cfg.maintainer);
    if let Some(url) = &opts.url {
        meta.url = url.clone();
    }
    if let Some(d) = &opts.description {
        meta.description = d.clone();
    }
    let mut entry = build_entry(id, &data.ordering, &data.digests(), AliasSet::new(), meta)
        .map_err(usage_on_no_tags)?;

    let listing = inspect_image(&client, id, &data.refs[&entry.latest.tag])?;
    let distinct = diff_against_bases(&listing, &bases);
    let counts_path = CacheStore::new(&cfg.cache_root).counts_path();
    entry.aliases = if counts_path.exists() {
        let table = load_counts(&counts_path)?;
        select_aliases(id, &distinct, &table, &cfg.thresholds)
    } else {
        info!(%id, "no counts.json, using every non-base executable");
        AliasSet::from_listing(&distinct)
    };
    if entry.aliases.is_empty() {
        warn!(%id, "entry has no aliases");
    }
    let written = write_entry(&cfg.registry_root, &entry)?;
    info!(%id, path = %written.display(), tags = entry.tags.len(), aliases = entry.aliases.len(), "entry written");
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selection {
    All,
    Due(NaiveDate),
    Ids(Vec<ContainerIdentifier>),
}

/// Identifier implied by an entry file's location under the registry root.
fn id_from_entry_path(root: &Path, path: &Path) -> Option<ContainerIdentifier> {
    let rel = path.strip_prefix(root).ok()?.parent()?;
    let s: Vec<String> = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    ContainerIdentifier::parse(&s.join("/")).ok()
}

fn registry_ids(root: &Path) -> Result<Vec<(ContainerIdentifier, PathBuf)>> {
    let mut out = Vec::new();
    for path in entry_files(root)? {
        match id_from_entry_path(root, &path) {
            Some(id) => out.push((id, path)),
            None => {
                warn!(path = %path.display(), "{ENTRY_FILE} outside an identifier directory, ignoring")
            }
        }
    }
    Ok(out)
}

fn refresh_one(cfg: &Config, path: &Path) -> Result<(RegistryEntry, EntryDelta)> {
    let entry = load_entry(path)?;
    let client = cfg.client()?;
    let mut skip = cfg.skip_tags.clone();
    skip.extend(entry.filter.iter().flatten().cloned());
    let data = fetch_tag_data(&client, &entry.docker, &skip)?;
    let (updated, delta) =
        update_entry(&entry, &data.ordering, &data.digests()).map_err(usage_on_no_tags)?;
    if !delta.is_empty() {
        write_entry(&cfg.registry_root, &updated)?;
    }
    Ok((updated, delta))
}

fn finish_batch(failures: &[anyhow::Error], succeeded: usize) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    Err(BatchFailure {
        failed: failures.len(),
        succeeded,
        all_network: failures.iter().all(is_network),
    }
    .into())
}

/// Refreshes the selected entries and prints one `[id]` block of delta
/// lines per changed entry. Unchanged entries are not rewritten.
pub fn cmd_update(cfg: &Config, selection: &Selection, out: &mut dyn Write) -> Result<()> {
    let root = &cfg.registry_root;
    if !root.is_dir() {
        return Err(UsageError(format!("registry root {} does not exist", root.display())).into());
    }
    let targets: Vec<(ContainerIdentifier, PathBuf)> = match selection {
        Selection::All => registry_ids(root)?,
        Selection::Due(date) => {
            let all = registry_ids(root)?;
            let ids: Vec<_> = all.iter().map(|(id, _)| id.clone()).collect();
            let due = due_on(&ids, *date);
            all.into_iter().filter(|(id, _)| due.contains(id)).collect()
        }
        Selection::Ids(ids) => ids
            .iter()
            .map(|id| (id.clone(), entry_path(root, id)))
            .collect(),
    };
    info!(count = targets.len(), "updating entries");

    let pool = cfg.thread_pool()?;
    let results: Vec<Result<(RegistryEntry, EntryDelta)>> = pool.install(|| {
        targets
            .par_iter()
            .map(|(id, path)| {
                if !path.exists() {
                    return Err(UsageError(format!("{id} is not in the registry")).into());
                }
                refresh_one(cfg, path).with_context(|| format!("updating {id}"))
            })
            .collect()
    });

    let mut failures = Vec::new();
    let mut succeeded = 0;
    for ((id, _), result) in targets.iter().zip(results) {
        match result {
            Ok((_, delta)) => {
                succeeded += 1;
                if !delta.is_empty() {
                    writeln!(out, "[{id}]")?;
                    for line in delta.lines() {
                        writeln!(out, "{line}")?;
                    }
                }
            }
            Err(e) => {
                error!("{e:#}");
                failures.push(e);
            }
        }
    }
    finish_batch(&failures, succeeded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CacheSummary {
    pub added: usize,
    pub skipped: usize,
    pub failed: usize,
}

enum CacheOutcome {
    Added,
    Skipped,
}

fn cache_one(
    cfg: &Config,
    store: &CacheStore,
    id: &ContainerIdentifier,
    refresh: bool,
) -> Result<CacheOutcome> {
    if store.contains(id) && !refresh {
        return Ok(CacheOutcome::Skipped);
    }
    let client = cfg.client()?;
    let ordering = ordered_tags(&client, id, &cfg.skip_tags)?;
    let tag =
        latest_tag_name(&ordering).ok_or_else(|| UsageError(format!("{id} has no usable tags")))?;
    let reference = client
        .resolve_digest(id, &tag)
        .with_context(|| format!("resolving {id}:{tag}"))?;
    let listing = inspect_image(&client, id, &reference)?;
    store.store_listing(&listing)?;
    Ok(CacheOutcome::Added)
}

/// Stores an executable listing for each identifier in `list_file`,
/// skipping ones already cached unless `refresh` is set.
pub fn cmd_cache_add(
    cfg: &Config,
    list_file: &Path,
    refresh: bool,
    out: &mut dyn Write,
) -> Result<CacheSummary> {
    let ids = read_id_list(list_file)?;
    let store = CacheStore::new(&cfg.cache_root);
    let pool = cfg.thread_pool()?;
    let results: Vec<Result<CacheOutcome>> = pool.install(|| {
        ids.par_iter()
            .map(|id| cache_one(cfg, &store, id, refresh).with_context(|| format!("caching {id}")))
            .collect()
    });
    let mut summary = CacheSummary::default();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(CacheOutcome::Added) => summary.added += 1,
            Ok(CacheOutcome::Skipped) => summary.skipped += 1,
            Err(e) => {
                error!("{e:#}");
                failures.push(e);
            }
        }
    }
    summary.failed = failures.len();
    writeln!(
        out,
        "added {} skipped {} failed {}",
        summary.added, summary.skipped, summary.failed
    )?;
    finish_batch(&failures, summary.added + summary.skipped)?;
    Ok(summary)
}

pub fn cmd_cache_counts(cfg: &Config, out: &mut dyn Write) -> Result<PathBuf> {
    let store = CacheStore::new(&cfg.cache_root);
    let (path, table) = store.write_counts()?;
    writeln!(
        out,
        "{}: {} containers, {} names",
        path.display(),
        table.total_containers,
        table.counts.len()
    )?;
    Ok(path)
}

pub fn cmd_export(cfg: &Config, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let summary = export_static_api(&cfg.registry_root, out_dir)?;
    writeln!(
        out,
        "exported {} entries to {}",
        summary.entries,
        out_dir.display()
    )?;
    Ok(())
}

/// With `due`, prints the identifiers scheduled that day; otherwise prints
/// every identifier prefixed by its day.
pub fn cmd_groups(
    cfg: &Config,
    list: Option<&Path>,
    due: Option<NaiveDate>,
    out: &mut dyn Write,
) -> Result<()> {
    let ids: Vec<ContainerIdentifier> = match list {
        Some(path) => read_id_list(path)?,
        None => registry_ids(&cfg.registry_root)?
            .into_iter()
            .map(|(id, _)| id)
            .collect(),
    };
    match due {
        Some(date) => {
            for id in due_on(&ids, date) {
                writeln!(out, "{id}")?;
            }
        }
        None => {
            for group in partition(&ids)? {
                for id in &group.members {
                    writeln!(out, "{:02} {id}", group.day)?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    pub tag: Option<String>,
    pub pin_tag: bool,
    pub dialect: Dialect,
    pub binds: Vec<String>,
    pub runtime_options: Vec<String>,
    /// Write `<out>/<id>/<tag>/module.*` instead of printing.
    pub out_dir: Option<PathBuf>,
}

pub fn cmd_render(
    cfg: &Config,
    id: &ContainerIdentifier,
    opts: &RenderOptions,
    out: &mut dyn Write,
) -> Result<()> {
    let path = entry_path(&cfg.registry_root, id);
    if !path.exists() {
        return Err(UsageError(format!("{id} is not in the registry")).into());
    }
    let entry = load_entry(&path)?;
    let mut ctx = if opts.pin_tag {
        RenderContext::by_tag(&entry, opts.tag.as_deref())
    } else {
        RenderContext::by_digest(&entry, opts.tag.as_deref())
    }
    .map_err(|e| UsageError(e.to_string()))?;
    ctx.runtime = cfg.runtime.clone();
    ctx.runtime_options = opts.runtime_options.clone();
    ctx.binds = opts
        .binds
        .iter()
        .map(|b| b.parse::<Bind>().map_err(|e| UsageError(e.to_string())))
        .collect::<Result<_, _>>()?;
    match &opts.out_dir {
        Some(dir) => {
            let written = write_modulefile(dir, &entry, &ctx, opts.dialect)?;
            writeln!(out, "{}", written.display())?;
        }
        None => out.write_all(render_modulefile(&entry, &ctx, opts.dialect)?.as_bytes())?,
    }
    Ok(())
}
