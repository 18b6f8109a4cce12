//! Wrapper command lines and modulefiles for a registry entry.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::alias::{is_safe_alias_path, is_valid_alias_name};
use crate::fsutil::write_atomic;
use crate::identifier::Digest;
use crate::recipe::RegistryEntry;

pub const DEFAULT_RUNTIME: &str = "singularity";

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("unknown alias {0:?}")]
    UnknownAlias(String),
    #[error("tag {0:?} is not in the entry")]
    UnknownTag(String),
    #[error("invalid bind {0:?}: expected two absolute paths as src:dst")]
    InvalidBind(String),
    #[error("invalid runtime command {0:?}")]
    InvalidRuntime(String),
    #[error("alias {name:?} -> {path:?} is not shell-safe")]
    UnsafeAlias { name: String, path: String },
    #[error("unknown modulefile dialect {0:?} (expected lua or tcl)")]
    UnknownDialect(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bind {
    pub src: String,
    pub dst: String,
}

impl FromStr for Bind {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((src, dst))
                if src.starts_with('/') && dst.starts_with('/') && !dst.contains(':') =>
            {
                Ok(Self {
                    src: src.to_string(),
                    dst: dst.to_string(),
                })
            }
            _ => Err(RenderError::InvalidBind(s.to_string())),
        }
    }
}

/// Which version of the image a rendering points at. The tag is always
/// kept because it names the output directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pin {
    Tag(String),
    Digest { tag: String, digest: Digest },
}

impl Pin {
    pub fn tag(&self) -> &str {
        match self {
            Pin::Tag(t) | Pin::Digest { tag: t, .. } => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderContext {
    pub runtime: String,
    pub pin: Pin,
    /// Each element is passed as a single argument.
    pub runtime_options: Vec<String>,
    pub binds: Vec<Bind>,
}

impl RenderContext {
    /// Pins `tag` by its digest; `None` means the entry's latest.
    pub fn by_digest(entry: &RegistryEntry, tag: Option<&str>) -> Result<Self, RenderError> {
        let tag = tag.unwrap_or(&entry.latest.tag);
        let digest = entry
            .tags
            .get(tag)
            .ok_or_else(|| RenderError::UnknownTag(tag.to_string()))?;
        Ok(Self::with_pin(Pin::Digest {
            tag: tag.to_string(),
            digest: digest.clone(),
        }))
    }

    pub fn by_tag(entry: &RegistryEntry, tag: Option<&str>) -> Result<Self, RenderError> {
        let tag = tag.unwrap_or(&entry.latest.tag);
        if !entry.tags.contains_key(tag) {
            return Err(RenderError::UnknownTag(tag.to_string()));
        }
        Ok(Self::with_pin(Pin::Tag(tag.to_string())))
    }

    fn with_pin(pin: Pin) -> Self {
        Self {
            runtime: DEFAULT_RUNTIME.to_string(),
            pin,
            runtime_options: Vec::new(),
            binds: Vec::new(),
        }
    }

    pub fn container_ref(&self, entry: &RegistryEntry) -> String {
        match &self.pin {
            Pin::Tag(tag) => format!("docker://{}:{tag}", entry.docker),
            Pin::Digest { digest, .. } => format!("docker://{}@{digest}", entry.docker),
        }
    }

    fn check(&self) -> Result<(), RenderError> {
        let ok = !self.runtime.is_empty()
            && self
                .runtime
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '/'));
        if ok {
            Ok(())
        } else {
            Err(RenderError::InvalidRuntime(self.runtime.clone()))
        }
    }
}

fn quote(word: &str) -> String {
    // Words with NUL are impossible to quote; none reach here because
    // option strings come from config and paths are pre-validated.
    shlex::try_quote(word)
        .map(|q| q.into_owned())
        .unwrap_or_else(|_| "''".to_string())
}

fn checked_alias<'a>(entry: &'a RegistryEntry, name: &str) -> Result<&'a str, RenderError> {
    let path = entry
        .aliases
        .get(name)
        .ok_or_else(|| RenderError::UnknownAlias(name.to_string()))?;
    if !is_valid_alias_name(name) || !is_safe_alias_path(path) {
        return Err(RenderError::UnsafeAlias {
            name: name.to_string(),
            path: path.to_string(),
        });
    }
    Ok(path)
}

/// Command prefix up to and including the executable path.
fn exec_prefix(entry: &RegistryEntry, path: &str, ctx: &RenderContext) -> String {
    let mut words = vec![ctx.runtime.clone(), "exec".to_string()];
    words.extend(ctx.runtime_options.iter().map(|o| quote(o)));
    for bind in &ctx.binds {
        words.push("-B".to_string());
        words.push(quote(&format!("{}:{}", bind.src, bind.dst)));
    }
    words.push(quote(&ctx.container_ref(entry)));
    words.push(path.to_string());
    words.join(" ")
}

/// `<runtime> exec <options> -B <bind> <container> <path> "$@"`
pub fn render_exec_line(
    entry: &RegistryEntry,
    alias: &str,
    ctx: &RenderContext,
) -> Result<String, RenderError> {
    ctx.check()?;
    let path = checked_alias(entry, alias)?;
    Ok(format!("{} \"$@\"", exec_prefix(entry, path, ctx)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dialect {
    Lua,
    Tcl,
}

impl Dialect {
    pub fn file_name(self) -> &'static str {
        match self {
            Dialect::Lua => "module.lua",
            Dialect::Tcl => "module.tcl",
        }
    }
}

impl FromStr for Dialect {
    type Err = RenderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lua" | "lmod" => Ok(Dialect::Lua),
            "tcl" => Ok(Dialect::Tcl),
            _ => Err(RenderError::UnknownDialect(s.to_string())),
        }
    }
}

/// Lua long-bracket string whose level avoids clashing with the content.
fn lua_long(s: &str) -> String {
    let mut level = 0;
    loop {
        let eq = "=".repeat(level);
        let close = format!("]{eq}]");
        if !s.contains(&close) && !s.ends_with(&format!("]{eq}")) {
            // A leading newline would be swallowed by the opening bracket.
            let lead = if s.starts_with('\n') { "\n" } else { "" };
            return format!("[{eq}[{lead}{s}{close}");
        }
        level += 1;
    }
}

/// Tcl word: braces when the content is brace-safe, otherwise a fully
/// escaped double-quoted string.
fn tcl_word(s: &str) -> String {
    let mut depth = 0i32;
    let balanced = s.chars().all(|c| {
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            _ => {}
        }
        depth >= 0
    }) && depth == 0;
    if balanced && !s.contains('\\') {
        return format!("{{{s}}}");
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' | '$' | '[' | ']' | '"' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn help_text(entry: &RegistryEntry, ctx: &RenderContext) -> String {
    let mut help = format!(
        "{}\n\nContainer: {}\nCommands:\n",
        entry.description,
        ctx.container_ref(entry)
    );
    for name in entry.aliases.names() {
        let _ = writeln!(help, " - {name}");
    }
    help
}

/// Modulefile defining one shell function per alias, sorted by name.
pub fn render_modulefile(
    entry: &RegistryEntry,
    ctx: &RenderContext,
    dialect: Dialect,
) -> Result<String, RenderError> {
    ctx.check()?;
    let mut commands = Vec::with_capacity(entry.aliases.len());
    for name in entry.aliases.names() {
        let path = checked_alias(entry, name)?;
        commands.push((name, exec_prefix(entry, path, ctx)));
    }
    let tag = ctx.pin.tag();
    let help = help_text(entry, ctx);
    let whatis = [
        format!("Name: {}", entry.docker),
        format!("Version: {tag}"),
        format!("Description: {}", entry.description),
        format!("URL: {}", entry.url),
    ];

    let mut out = String::new();
    match dialect {
        Dialect::Lua => {
            let _ = writeln!(out, "-- {} {tag}", entry.docker);
            let _ = writeln!(out, "help({})\n", lua_long(&help));
            for line in &whatis {
                let _ = writeln!(out, "whatis({})", lua_long(line));
            }
            out.push('\n');
            for (name, prefix) in &commands {
                let _ = writeln!(
                    out,
                    "set_shell_function(\"{name}\", {}, {})",
                    lua_long(&format!("{prefix} \"$@\"")),
                    lua_long(&format!("{prefix} \\!*"))
                );
            }
        }
        Dialect::Tcl => {
            out.push_str("#%Module1.0\n");
            let _ = writeln!(out, "## {} {tag}\n", entry.docker);
            out.push_str("proc ModulesHelp { } {\n");
            let _ = writeln!(out, "    puts stderr {}", tcl_word(help.trim_end()));
            out.push_str("}\n\n");
            for line in &whatis {
                let _ = writeln!(out, "module-whatis {}", tcl_word(line));
            }
            out.push('\n');
            for (name, prefix) in &commands {
                let _ = writeln!(
                    out,
                    "set-function {name} {}",
                    tcl_word(&format!("{prefix} \"$@\""))
                );
            }
        }
    }
    Ok(out)
}

/// Location of a rendered modulefile: `<out>/<identifier>/<tag>/module.*`.
pub fn modulefile_path(
    out_root: &Path,
    entry: &RegistryEntry,
    ctx: &RenderContext,
    dialect: Dialect,
) -> PathBuf {
    out_root
        .join(entry.docker.relative_path())
        .join(ctx.pin.tag())
        .join(dialect.file_name())
}

pub fn write_modulefile(
    out_root: &Path,
    entry: &RegistryEntry,
    ctx: &RenderContext,
    dialect: Dialect,
) -> Result<PathBuf, RenderError> {
    let text = render_modulefile(entry, ctx, dialect)?;
    let path = modulefile_path(out_root, entry, ctx, dialect);
    write_atomic(&path, text.as_bytes()).map_err(|source| RenderError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}
