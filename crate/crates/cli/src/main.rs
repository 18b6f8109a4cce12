use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use tracing::error;
use tracing_subscriber::EnvFilter;

use module_forge::exit::{classify, UsageError};
use module_forge::{
    cmd_add, cmd_cache_add, cmd_cache_counts, cmd_export, cmd_groups, cmd_render, cmd_update,
    AddOptions, Config, GlobalArgs, RenderOptions, Selection,
};
use module_forge_core::render::Dialect;
use module_forge_core::ContainerIdentifier;

/// Generate and maintain container module registry entries.
#[derive(Debug, Parser)]
#[command(name = "module-forge", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    /// More log output on stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Create a registry entry for a container
    Add {
        identifier: ContainerIdentifier,
        /// Overwrite an existing entry
        #[arg(long)]
        force: bool,
        /// Source web page recorded in the entry
        #[arg(long)]
        url: Option<String>,
        #[arg(long)]
        description: Option<String>,
    },
    /// Refresh tags and digests of existing entries
    Update {
        /// Every entry in the registry
        #[arg(long, conflicts_with_all = ["due", "identifiers"])]
        all: bool,
        /// Entries whose update group falls on this date (YYYY-MM-DD)
        #[arg(long, conflicts_with = "identifiers")]
        due: Option<NaiveDate>,
        identifiers: Vec<ContainerIdentifier>,
    },
    /// Maintain the executable cache
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
    /// Write the static JSON API for the registry
    Export {
        /// Output directory
        #[arg(long, default_value = "api")]
        out: PathBuf,
    },
    /// Show update groups
    Groups {
        /// Identifier list file (defaults to the registry's entries)
        #[arg(long)]
        list: Option<PathBuf>,
        /// Only identifiers due on this date (YYYY-MM-DD)
        #[arg(long)]
        due: Option<NaiveDate>,
    },
    /// Render a modulefile for an entry
    Render {
        identifier: ContainerIdentifier,
        /// Tag to render (defaults to latest)
        #[arg(long)]
        tag: Option<String>,
        /// Reference the image by tag instead of digest
        #[arg(long)]
        pin_tag: bool,
        #[arg(long, default_value = "lua")]
        dialect: Dialect,
        /// Bind mount src:dst (repeatable)
        #[arg(long = "bind", short = 'B')]
        binds: Vec<String>,
        /// Extra runtime argument (repeatable)
        #[arg(long = "option", allow_hyphen_values = true)]
        options: Vec<String>,
        /// Write under this directory instead of printing
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum CacheAction {
    /// Discover executables for each identifier in a list file
    Add {
        list: PathBuf,
        /// Re-inspect identifiers that are already cached
        #[arg(long)]
        refresh: bool,
    },
    /// Rebuild counts.json from the cached listings
    Counts,
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(&cli.global)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Add {
            identifier,
            force,
            url,
            description,
        } => {
            let path = cmd_add(
                &cfg,
                &identifier,
                &AddOptions {
                    force,
                    url,
                    description,
                },
            )?;
            writeln!(out, "{}", path.display())?;
        }
        Command::Update {
            all,
            due,
            identifiers,
        } => {
            let selection = match (all, due) {
                (true, _) => Selection::All,
                (false, Some(date)) => Selection::Due(date),
                (false, None) if !identifiers.is_empty() => Selection::Ids(identifiers),
                _ => {
                    return Err(
                        UsageError("update needs --all, --due DATE or identifiers".into()).into(),
                    )
                }
            };
            cmd_update(&cfg, &selection, &mut out)?;
        }
        Command::Cache { action } => match action {
            CacheAction::Add { list, refresh } => {
                cmd_cache_add(&cfg, &list, refresh, &mut out)?;
            }
            CacheAction::Counts => {
                cmd_cache_counts(&cfg, &mut out)?;
            }
        },
        Command::Export { out: dir } => cmd_export(&cfg, &dir, &mut out)?,
        Command::Groups { list, due } => cmd_groups(&cfg, list.as_deref(), due, &mut out)?,
        Command::Render {
            identifier,
            tag,
            pin_tag,
            dialect,
            binds,
            options,
            out: out_dir,
        } => {
            let opts = RenderOptions {
                tag,
                pin_tag,
                dialect,
                binds,
                runtime_options: options,
                out_dir,
            };
            cmd_render(&cfg, &identifier, &opts, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let default_level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("MODULE_FORGE_LOG")
        .unwrap_or_else(|_| EnvFilter::new(default_level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (category, code) = classify(&e);
            error!(category, "{e:#}");
            ExitCode::from(code)
        }
    }
}
