//! Registry v2 API client: tag listing, digest resolution, config and
//! layer retrieval.
//!
//! Requests are retried on 429, 5xx, timeouts and truncated bodies with
//! capped exponential backoff. A `401` carrying a bearer challenge triggers
//! one anonymous token fetch per repository; tokens are cached for the life
//! of the client.

mod auth;
pub mod manifest;

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::sync::RwLock;
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::header::{HeaderMap, ACCEPT, CONTENT_LENGTH, CONTENT_TYPE, LINK, WWW_AUTHENTICATE};
use reqwest::{Method, StatusCode, Url};
use serde::Deserialize;
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub use auth::BearerChallenge;
use manifest::{ConfigBlob, RawManifest, ACCEPTED_MANIFEST_TYPES};

use crate::identifier::{ContainerIdentifier, Digest};

/// Environment variable holding an optional static bearer token.
pub const TOKEN_ENV: &str = "MODULE_FORGE_TOKEN";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("transient registry failure: {0}")]
    Transient(String),
    #[error("unsupported manifest media type {0:?}")]
    UnsupportedMediaType(String),
    #[error("integrity check failed: expected {expected}, got {actual}")]
    Integrity { expected: String, actual: String },
    #[error("registry protocol error: {0}")]
    Protocol(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagList {
    pub identifier: ContainerIdentifier,
    pub tags: Vec<String>,
    pub fetched_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRef {
    pub media_type: String,
    pub digest: Digest,
    pub size_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ImageConfig {
    pub env: Vec<String>,
    pub entrypoint: Option<Vec<String>>,
    pub cmd: Option<Vec<String>>,
    pub layer_digests: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlatformSelector {
    pub os: String,
    pub architecture: String,
    pub variant: Option<String>,
}

impl Default for PlatformSelector {
    fn default() -> Self {
        Self {
            os: "linux".into(),
            architecture: "amd64".into(),
            variant: None,
        }
    }
}

impl std::str::FromStr for PlatformSelector {
    type Err = String;

    /// Parses `os/arch[/variant]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [os, arch] if !os.is_empty() && !arch.is_empty() => Ok(Self {
                os: os.to_string(),
                architecture: arch.to_string(),
                variant: None,
            }),
            [os, arch, variant] if !os.is_empty() && !arch.is_empty() && !variant.is_empty() => {
                Ok(Self {
                    os: os.to_string(),
                    architecture: arch.to_string(),
                    variant: Some(variant.to_string()),
                })
            }
            _ => Err(format!(
                "invalid platform {s:?}, expected os/arch[/variant]"
            )),
        }
    }
}

impl std::fmt::Display for PlatformSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.os, self.architecture)?;
        if let Some(v) = &self.variant {
            write!(f, "/{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    fn delay(&self, failed_attempt: u32) -> Duration {
        let factor = 1u32 << failed_attempt.saturating_sub(1).min(16);
        self.initial_delay
            .saturating_mul(factor)
            .min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Registry host → base URL overrides (e.g. `quay.io` → `http://127.0.0.1:5000`).
    pub endpoints: HashMap<String, String>,
    pub retry: RetryPolicy,
    pub static_token: Option<String>,
    pub platform: PlatformSelector,
    /// Requested tag page size (`n` parameter); the registry default when unset.
    pub page_size: Option<usize>,
    pub timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoints: HashMap::new(),
            retry: RetryPolicy::default(),
            static_token: None,
            platform: PlatformSelector::default(),
            page_size: None,
            timeout: Duration::from_secs(60),
        }
    }
}

impl ClientConfig {
    /// Picks up [`TOKEN_ENV`] when set and non-empty.
    pub fn with_env_token(mut self) -> Self {
        if let Ok(token) = std::env::var(TOKEN_ENV) {
            if !token.is_empty() {
                self.static_token = Some(token);
            }
        }
        self
    }
}

/// Outcome of a single request attempt.
enum Attempt<T> {
    Done(T),
    Retry(RegistryError),
}

#[derive(Deserialize)]
struct TagsPage {
    #[serde(default)]
    tags: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct TokenResponse {
    #[serde(default)]
    token: Option<String>,
    #[serde(default)]
    access_token: Option<String>,
}

pub struct RegistryClient {
    http: Client,
    config: ClientConfig,
    tokens: RwLock<HashMap<String, String>>,
}

impl RegistryClient {
    pub fn new(config: ClientConfig) -> Result<Self, RegistryError> {
        let http = Client::builder()
            .timeout(config.timeout)
            .user_agent(concat!("module-forge/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| RegistryError::Protocol(format!("building http client: {e}")))?;
        Ok(Self {
            http,
            config,
            tokens: RwLock::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn base_url(&self, id: &ContainerIdentifier) -> String {
        let host = id.registry_host();
        match self.config.endpoints.get(host) {
            Some(url) => url.trim_end_matches('/').to_string(),
            None if host == "docker.io" => "https://registry-1.docker.io".to_string(),
            None => format!("https://{host}"),
        }
    }

    fn endpoint(&self, id: &ContainerIdentifier, suffix: &str) -> Result<Url, RegistryError> {
        let raw = format!("{}/v2/{}/{}", self.base_url(id), id.name(), suffix);
        Url::parse(&raw).map_err(|e| RegistryError::Protocol(format!("bad url {raw}: {e}")))
    }

    fn token_key(&self, id: &ContainerIdentifier) -> String {
        format!("{}|{}", self.base_url(id), id.name())
    }

    fn authorize(&self, id: &ContainerIdentifier, req: RequestBuilder) -> RequestBuilder {
        if let Some(token) = self.tokens.read().unwrap().get(&self.token_key(id)) {
            return req.bearer_auth(token);
        }
        match &self.config.static_token {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    fn fetch_token(
        &self,
        id: &ContainerIdentifier,
        challenge: &BearerChallenge,
    ) -> Result<String, RegistryError> {
        let mut url = Url::parse(&challenge.realm).map_err(|e| {
            RegistryError::AuthFailure(format!("bad token realm {:?}: {e}", challenge.realm))
        })?;
        {
            let mut q = url.query_pairs_mut();
            if let Some(service) = &challenge.service {
                q.append_pair("service", service);
            }
            let scope = challenge
                .scope
                .clone()
                .unwrap_or_else(|| format!("repository:{}:pull", id.name()));
            q.append_pair("scope", &scope);
        }
        debug!(%url, "fetching anonymous token");
        let resp = self
            .http
            .get(url.clone())
            .send()
            .map_err(|e| RegistryError::Transient(format!("token endpoint {url}: {e}")))?;
        let status = resp.status();
        if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
            return Err(RegistryError::Transient(format!(
                "token endpoint returned {status}"
            )));
        }
        if !status.is_success() {
            return Err(RegistryError::AuthFailure(format!(
                "token endpoint returned {status}"
            )));
        }
        let bytes = resp
            .bytes()
            .map_err(|e| RegistryError::Transient(format!("reading token response: {e}")))?;
        let body: TokenResponse = serde_json::from_slice(&bytes)
            .map_err(|e| RegistryError::AuthFailure(format!("unreadable token response: {e}")))?;
        body.token
            .or(body.access_token)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| RegistryError::AuthFailure("token response carried no token".into()))
    }

    /// Runs one logical request with auth negotiation and retries.
    ///
    /// `handle` receives each successful (2xx) response and may ask for a
    /// retry, e.g. when the body turns out truncated.
    fn execute<T>(
        &self,
        id: &ContainerIdentifier,
        method: Method,
        url: &Url,
        accept: Option<&str>,
        mut handle: impl FnMut(Response) -> Result<Attempt<T>, RegistryError>,
    ) -> Result<T, RegistryError> {
        let policy = &self.config.retry;
        let attempts = policy.attempts.max(1);
        let mut negotiated = false;
        let mut attempt = 1;
        loop {
            let mut req = self.http.request(method.clone(), url.clone());
            if let Some(accept) = accept {
                req = req.header(ACCEPT, accept);
            }
            let req = self.authorize(id, req);
            let err = match req.send() {
                Err(e) => RegistryError::Transient(format!("{method} {url}: {e}")),
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match handle(resp)? {
                            Attempt::Done(value) => return Ok(value),
                            Attempt::Retry(err) => err,
                        }
                    } else if status == StatusCode::UNAUTHORIZED {
                        let challenge = resp
                            .headers()
                            .get(WWW_AUTHENTICATE)
                            .and_then(|v| v.to_str().ok())
                            .and_then(BearerChallenge::parse);
                        match challenge {
                            Some(challenge) if !negotiated => {
                                negotiated = true;
                                let token = self.fetch_token(id, &challenge)?;
                                self.tokens
                                    .write()
                                    .unwrap()
                                    .insert(self.token_key(id), token);
                                continue;
                            }
                            _ => {
                                return Err(RegistryError::AuthFailure(format!(
                                    "{method} {url} returned 401"
                                )))
                            }
                        }
                    } else if status == StatusCode::FORBIDDEN {
                        return Err(RegistryError::AuthFailure(format!(
                            "{method} {url} returned 403"
                        )));
                    } else if status == StatusCode::NOT_FOUND {
                        return Err(RegistryError::NotFound(url.path().to_string()));
                    } else if status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error() {
                        RegistryError::Transient(format!("{method} {url} returned {status}"))
                    } else {
                        return Err(RegistryError::Protocol(format!(
                            "{method} {url} returned {status}"
                        )));
                    }
                }
            };
            if attempt >= attempts {
                return Err(err);
            }
            let delay = policy.delay(attempt);
            warn!(attempt, ?delay, error = %err, "retrying registry request");
            thread::sleep(delay);
            attempt += 1;
        }
    }

    fn get_bytes(
        &self,
        id: &ContainerIdentifier,
        url: &Url,
        accept: Option<&str>,
    ) -> Result<(HeaderMap, Vec<u8>), RegistryError> {
        self.execute(id, Method::GET, url, accept, |resp| {
            let headers = resp.headers().clone();
            match resp.bytes() {
                Ok(body) => Ok(Attempt::Done((headers, body.to_vec()))),
                Err(e) => Ok(Attempt::Retry(RegistryError::Transient(format!(
                    "reading {url}: {e}"
                )))),
            }
        })
    }

    /// Lists every tag, following `Link: <...>; rel="next"` pagination.
    pub fn list_tags(&self, id: &ContainerIdentifier) -> Result<TagList, RegistryError> {
        let mut url = self.endpoint(id, "tags/list")?;
        if let Some(n) = self.config.page_size {
            url.query_pairs_mut().append_pair("n", &n.to_string());
        }
        let mut tags = Vec::new();
        let mut seen = std::collections::HashSet::new();
        loop {
            let (headers, body) = self.get_bytes(id, &url, Some("application/json"))?;
            let page: TagsPage = serde_json::from_slice(&body)
                .map_err(|e| RegistryError::Protocol(format!("tag list from {url}: {e}")))?;
            for tag in page.tags.unwrap_or_default() {
                if !tag.is_empty() && seen.insert(tag.clone()) {
                    tags.push(tag);
                }
            }
            match next_link(&headers, &url)? {
                Some(next) => url = next,
                None => break,
            }
        }
        Ok(TagList {
            identifier: id.clone(),
            tags,
            fetched_at: Utc::now(),
        })
    }

    /// Resolves a tag to the digest the registry reports for it. For
    /// multi-arch images this is the index digest.
    pub fn resolve_digest(
        &self,
        id: &ContainerIdentifier,
        tag: &str,
    ) -> Result<ManifestRef, RegistryError> {
        let url = self.endpoint(id, &format!("manifests/{tag}"))?;
        let accept = ACCEPTED_MANIFEST_TYPES.join(", ");
        let head = self.execute(id, Method::HEAD, &url, Some(&accept), |resp| {
            Ok(Attempt::Done(resp.headers().clone()))
        })?;
        let media_type = header_str(&head, CONTENT_TYPE.as_str()).map(media_type_only);
        if let Some(raw) = header_str(&head, "docker-content-digest") {
            let digest = Digest::parse(raw.trim()).map_err(|e| {
                RegistryError::Protocol(format!("digest header for {id}:{tag}: {e}"))
            })?;
            let size_bytes = header_str(&head, CONTENT_LENGTH.as_str())
                .and_then(|v| v.trim().parse().ok())
                .unwrap_or(0);
            return Ok(ManifestRef {
                media_type: media_type.unwrap_or_default(),
                digest,
                size_bytes,
            });
        }
        debug!(%id, tag, "no digest header, hashing manifest body");
        let (headers, body) = self.get_bytes(id, &url, Some(&accept))?;
        let media_type = header_str(&headers, CONTENT_TYPE.as_str())
            .map(media_type_only)
            .or_else(|| {
                serde_json::from_slice::<RawManifest>(&body)
                    .ok()
                    .and_then(|m| m.media_type)
            })
            .unwrap_or_default();
        Ok(ManifestRef {
            media_type,
            digest: Digest::of_bytes(&body),
            size_bytes: body.len() as u64,
        })
    }

    fn fetch_manifest(
        &self,
        id: &ContainerIdentifier,
        digest: &Digest,
    ) -> Result<(String, RawManifest), RegistryError> {
        let url = self.endpoint(id, &format!("manifests/{digest}"))?;
        let (headers, body) =
            self.get_bytes(id, &url, Some(&ACCEPTED_MANIFEST_TYPES.join(", ")))?;
        verify(digest, &Digest::of_bytes(&body))?;
        let manifest: RawManifest = serde_json::from_slice(&body)
            .map_err(|e| RegistryError::Protocol(format!("manifest {digest}: {e}")))?;
        let media_type = manifest
            .media_type
            .clone()
            .or_else(|| header_str(&headers, CONTENT_TYPE.as_str()).map(media_type_only))
            .unwrap_or_default();
        Ok((media_type, manifest))
    }

    /// Fetches and decodes the image config, descending into the child
    /// manifest matching the configured platform when `reference` is an
    /// index.
    pub fn fetch_image_config(
        &self,
        id: &ContainerIdentifier,
        reference: &ManifestRef,
    ) -> Result<ImageConfig, RegistryError> {
        let (mut media_type, mut manifest) = self.fetch_manifest(id, &reference.digest)?;
        if manifest::is_index(&media_type) {
            let platform = &self.config.platform;
            let child = manifest
                .manifests
                .iter()
                .find(|d| {
                    d.platform.as_ref().is_some_and(|p| {
                        p.os == platform.os
                            && p.architecture == platform.architecture
                            && (platform.variant.is_none() || p.variant == platform.variant)
                    })
                })
                .ok_or_else(|| {
                    RegistryError::NotFound(format!(
                        "{id}@{}: no manifest for platform {platform}",
                        reference.digest
                    ))
                })?;
            let child_digest = parse_digest(&child.digest)?;
            (media_type, manifest) = self.fetch_manifest(id, &child_digest)?;
            if manifest::is_index(&media_type) {
                return Err(RegistryError::UnsupportedMediaType(format!(
                    "nested index {media_type}"
                )));
            }
        }
        if !manifest::is_image_manifest(&media_type) {
            // Untyped schema-2 manifests still carry a config descriptor.
            let untyped = media_type.is_empty()
                && manifest.schema_version == Some(2)
                && manifest.config.is_some();
            if !untyped {
                return Err(RegistryError::UnsupportedMediaType(media_type));
            }
        }
        let config_desc = manifest
            .config
            .as_ref()
            .ok_or_else(|| RegistryError::Protocol("image manifest without config".into()))?;
        let config_digest = parse_digest(&config_desc.digest)?;
        let url = self.endpoint(id, &format!("blobs/{config_digest}"))?;
        let (_, body) = self.get_bytes(id, &url, None)?;
        verify(&config_digest, &Digest::of_bytes(&body))?;
        let blob: ConfigBlob = serde_json::from_slice(&body)
            .map_err(|e| RegistryError::Protocol(format!("config blob {config_digest}: {e}")))?;
        let container = blob.config.unwrap_or_default();
        let env = container.env.unwrap_or_default();
        if let Some(bad) = env.iter().find(|e| !e.contains('=')) {
            return Err(RegistryError::Protocol(format!(
                "config env entry without '=': {bad:?}"
            )));
        }
        let layer_digests = manifest
            .layers
            .iter()
            .map(|l| parse_digest(&l.digest))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ImageConfig {
            env,
            entrypoint: container.entrypoint,
            cmd: container.cmd,
            layer_digests,
        })
    }

    /// Streams a blob into `dest`, returning the byte count. Nothing is
    /// written to `dest` unless the content hashes to `digest`.
    pub fn fetch_layer(
        &self,
        id: &ContainerIdentifier,
        digest: &Digest,
        dest: &mut dyn Write,
    ) -> Result<u64, RegistryError> {
        let url = self.endpoint(id, &format!("blobs/{digest}"))?;
        let mut spool = self.execute(id, Method::GET, &url, None, |mut resp| {
            let mut file = tempfile::tempfile()?;
            let mut hasher = Sha256::new();
            let mut buf = [0u8; 64 * 1024];
            let mut total = 0u64;
            loop {
                let n = match resp.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => n,
                    Err(e) => {
                        return Ok(Attempt::Retry(RegistryError::Integrity {
                            expected: digest.to_string(),
                            actual: format!("stream truncated after {total} bytes ({e})"),
                        }))
                    }
                };
                hasher.update(&buf[..n]);
                file.write_all(&buf[..n])?;
                total += n as u64;
            }
            let actual = Digest::from_hasher(hasher);
            if &actual != digest {
                return Ok(Attempt::Retry(RegistryError::Integrity {
                    expected: digest.to_string(),
                    actual: actual.to_string(),
                }));
            }
            Ok(Attempt::Done(file))
        })?;
        spool.seek(SeekFrom::Start(0))?;
        Ok(io::copy(&mut spool, dest)?)
    }

    /// Downloads a verified blob to a file.
    pub fn fetch_layer_to_file(
        &self,
        id: &ContainerIdentifier,
        digest: &Digest,
        path: &std::path::Path,
    ) -> Result<u64, RegistryError> {
        let mut file = File::create(path)?;
        let n = self.fetch_layer(id, digest, &mut file)?;
        file.sync_all()?;
        Ok(n)
    }
}

fn verify(expected: &Digest, actual: &Digest) -> Result<(), RegistryError> {
    if expected == actual {
        Ok(())
    } else {
        Err(RegistryError::Integrity {
            expected: expected.to_string(),
            actual: actual.to_string(),
        })
    }
}

fn parse_digest(raw: &str) -> Result<Digest, RegistryError> {
    Digest::parse(raw).map_err(|e| RegistryError::Protocol(e.to_string()))
}

fn header_str<'a>(headers: &'a HeaderMap, name: &str) -> Option<&'a str> {
    headers.get(name).and_then(|v| v.to_str().ok())
}

fn media_type_only(value: &str) -> String {
    value.split(';').next().unwrap_or("").trim().to_string()
}

/// Extracts the `rel="next"` target of a `Link` header, resolved against
/// the current URL.
fn next_link(headers: &HeaderMap, current: &Url) -> Result<Option<Url>, RegistryError> {
    for value in headers.get_all(LINK) {
        let Ok(value) = value.to_str() else { continue };
        for part in value.split(',') {
            let mut pieces = part.split(';');
            let target = pieces.next().unwrap_or("").trim();
            let is_next = pieces.any(|p| {
                let p = p.trim().replace(' ', "");
                p == "rel=\"next\"" || p == "rel=next"
            });
            if is_next {
                let target = target.trim_start_matches('<').trim_end_matches('>');
                return current.join(target).map(Some).map_err(|e| {
                    RegistryError::Protocol(format!("bad Link target {target:?}: {e}"))
                });
            }
        }
    }
    Ok(None)
}
