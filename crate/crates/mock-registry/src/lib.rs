//! A small in-process registry speaking the v2 API subset the client uses:
//! tag listing with `Link` pagination, manifest HEAD/GET by tag or digest,
//! blob GET, and an optional anonymous bearer-token flow.
//!
//! Every response closes the connection, which keeps the server a handful
//! of lines and makes truncated-body faults trivial to inject.

pub mod fixtures;
pub mod image;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use sha2::{Digest, Sha256};

pub use image::{ImageSpec, LayerBuilder};

pub const OCI_MANIFEST: &str = "application/vnd.oci.image.manifest.v1+json";
pub const OCI_INDEX: &str = "application/vnd.oci.image.index.v1+json";
pub const OCI_CONFIG: &str = "application/vnd.oci.image.config.v1+json";
pub const OCI_LAYER_GZIP: &str = "application/vnd.oci.image.layer.v1.tar+gzip";

pub fn sha256_digest(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
struct StoredManifest {
    media_type: String,
    body: Vec<u8>,
}

#[derive(Debug, Default)]
struct Repo {
    /// Insertion order is the order tags are listed in.
    tags: Vec<String>,
    tag_targets: HashMap<String, String>,
    manifests: HashMap<String, StoredManifest>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub authorization: Option<String>,
}

#[derive(Debug, Default)]
struct State {
    repos: BTreeMap<String, Repo>,
    blobs: HashMap<String, Vec<u8>>,
    page_size: Option<usize>,
    required_token: Option<String>,
    reject_token_requests: bool,
    omit_digest_header: bool,
    /// Path substring → remaining number of 503 responses.
    failures: Vec<(String, usize)>,
    /// Path substrings whose blob bodies are cut short on every request.
    truncated: Vec<String>,
    log: Vec<Request>,
}

pub struct MockRegistry {
    addr: SocketAddr,
    state: Arc<Mutex<State>>,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockRegistry {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock registry");
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(Mutex::new(State::default()));
        let shutdown = Arc::new(AtomicBool::new(false));
        let handle = {
            let state = Arc::clone(&state);
            let shutdown = Arc::clone(&shutdown);
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let state = Arc::clone(&state);
                    thread::spawn(move || {
                        let _ = serve(stream, &state, addr);
                    });
                }
            })
        };
        Self {
            addr,
            state,
            shutdown,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    fn state(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap()
    }

    /// Server-side page size used when the client does not send `n`.
    pub fn set_page_size(&self, size: Option<usize>) {
        self.state().page_size = size;
    }

    /// Requires `Authorization: Bearer <token>`; the token is handed out
    /// anonymously by `/token`.
    pub fn require_token(&self, token: &str) {
        self.state().required_token = Some(token.to_string());
    }

    pub fn reject_token_requests(&self, reject: bool) {
        self.state().reject_token_requests = reject;
    }

    pub fn omit_digest_header(&self, omit: bool) {
        self.state().omit_digest_header = omit;
    }

    /// The next `count` requests whose path contains `path_fragment` get 503.
    pub fn fail_next(&self, path_fragment: &str, count: usize) {
        self.state()
            .failures
            .push((path_fragment.to_string(), count));
    }

    /// Blob responses for paths containing `path_fragment` advertise the full
    /// length but send only half the body.
    pub fn truncate_blob(&self, path_fragment: &str) {
        self.state().truncated.push(path_fragment.to_string());
    }

    pub fn requests(&self) -> Vec<Request> {
        self.state().log.clone()
    }

    pub fn clear_requests(&self) {
        self.state().log.clear();
    }

    pub fn insert_blob(&self, bytes: Vec<u8>) -> String {
        let digest = sha256_digest(&bytes);
        self.state().blobs.insert(digest.clone(), bytes);
        digest
    }

    /// Stores a blob under an arbitrary (possibly wrong) digest.
    pub fn insert_blob_raw(&self, digest: &str, bytes: Vec<u8>) {
        self.state().blobs.insert(digest.to_string(), bytes);
    }

    pub fn insert_manifest(&self, repo: &str, media_type: &str, body: Vec<u8>) -> String {
        let digest = sha256_digest(&body);
        self.insert_manifest_raw(repo, &digest, media_type, body);
        digest
    }

    pub fn insert_manifest_raw(&self, repo: &str, digest: &str, media_type: &str, body: Vec<u8>) {
        let mut state = self.state();
        state
            .repos
            .entry(repo.to_string())
            .or_default()
            .manifests
            .insert(
                digest.to_string(),
                StoredManifest {
                    media_type: media_type.to_string(),
                    body,
                },
            );
    }

    /// Points `tag` at a stored manifest digest.
    pub fn tag(&self, repo: &str, tag: &str, digest: &str) {
        let mut state = self.state();
        let repo = state.repos.entry(repo.to_string()).or_default();
        if !repo.tag_targets.contains_key(tag) {
            repo.tags.push(tag.to_string());
        }
        repo.tag_targets.insert(tag.to_string(), digest.to_string());
    }

    pub fn untag(&self, repo: &str, tag: &str) {
        let mut state = self.state();
        if let Some(repo) = state.repos.get_mut(repo) {
            repo.tags.retain(|t| t != tag);
            repo.tag_targets.remove(tag);
        }
    }

    /// Seeds a tag with a manifest that only needs to exist, not to be
    /// fetchable as an image. Returns the digest.
    pub fn seed_tag(&self, repo: &str, tag: &str) -> String {
        let body = serde_json::to_vec(&serde_json::json!({
            "schemaVersion": 2,
            "mediaType": OCI_MANIFEST,
            "config": {"mediaType": OCI_CONFIG, "digest": sha256_digest(tag.as_bytes()), "size": tag.len()},
            "layers": [],
            "annotations": {"tag": tag},
        }))
        .unwrap();
        let digest = self.insert_manifest(repo, OCI_MANIFEST, body);
        self.tag(repo, tag, &digest);
        digest
    }

    /// Uploads config, layers and manifest for `spec`; returns the manifest
    /// digest. The image is not tagged.
    pub fn push_image(&self, repo: &str, spec: &ImageSpec) -> String {
        let config = spec.config_json();
        let config_len = config.len();
        let config_digest = self.insert_blob(config);
        let layers: Vec<serde_json::Value> = spec
            .layers
            .iter()
            .map(|layer| {
                let size = layer.len();
                let digest = self.insert_blob(layer.clone());
                serde_json::json!({"mediaType": OCI_LAYER_GZIP, "digest": digest, "size": size})
            })
            .collect();
        let manifest = serde_json::to_vec(&serde_json::json!({
            "schemaVersion": 2,
            "mediaType": OCI_MANIFEST,
            "config": {"mediaType": OCI_CONFIG, "digest": config_digest, "size": config_len},
            "layers": layers,
        }))
        .unwrap();
        self.insert_manifest(repo, OCI_MANIFEST, manifest)
    }

    /// Pushes one image per `(os, arch)` and an index referencing them.
    pub fn push_index(&self, repo: &str, images: &[(&str, &str, &ImageSpec)]) -> String {
        let children: Vec<serde_json::Value> = images
            .iter()
            .map(|(os, arch, spec)| {
                let digest = self.push_image(repo, spec);
                let size = self.state().repos[repo].manifests[&digest].body.len();
                serde_json::json!({
                    "mediaType": OCI_MANIFEST,
                    "digest": digest,
                    "size": size,
                    "platform": {"os": os, "architecture": arch},
                })
            })
            .collect();
        let index = serde_json::to_vec(&serde_json::json!({
            "schemaVersion": 2,
            "mediaType": OCI_INDEX,
            "manifests": children,
        }))
        .unwrap();
        self.insert_manifest(repo, OCI_INDEX, index)
    }
}

impl Drop for MockRegistry {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

struct Reply {
    status: u16,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
    /// Bytes actually sent; less than `body.len()` simulates truncation.
    send_len: usize,
}

impl Reply {
    fn new(status: u16, body: Vec<u8>) -> Self {
        let send_len = body.len();
        Self {
            status,
            headers: Vec::new(),
            body,
            send_len,
        }
    }

    fn json(status: u16, value: serde_json::Value) -> Self {
        Self::new(status, serde_json::to_vec(&value).unwrap())
            .header("Content-Type", "application/json")
    }

    fn error(status: u16, code: &str) -> Self {
        Self::json(
            status,
            serde_json::json!({"errors": [{"code": code, "message": code}]}),
        )
    }

    fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_string(), value.into()));
        self
    }
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        405 => "Method Not Allowed",
        503 => "Service Unavailable",
        _ => "Unknown",
    }
}

fn serve(stream: TcpStream, state: &Mutex<State>, addr: SocketAddr) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("").to_string();
    let target = parts.next().unwrap_or("").to_string();
    let mut authorization = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("authorization") {
                authorization = Some(value.trim().to_string());
            }
        }
    }
    let request = Request {
        method,
        path: target,
        authorization,
    };
    let reply = {
        let mut state = state.lock().unwrap();
        state.log.push(request.clone());
        route(&mut state, &request, addr)
    };
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {} {}\r\n",
        reply.status,
        reason(reply.status)
    )?;
    for (name, value) in &reply.headers {
        write!(out, "{name}: {value}\r\n")?;
    }
    write!(
        out,
        "Content-Length: {}\r\nConnection: close\r\n\r\n",
        reply.body.len()
    )?;
    if request.method != "HEAD" {
        out.write_all(&reply.body[..reply.send_len])?;
    }
    out.flush()?;
    out.shutdown(std::net::Shutdown::Both)
}

fn split_query(target: &str) -> (&str, HashMap<String, String>) {
    let (path, query) = target.split_once('?').unwrap_or((target, ""));
    let params = query
        .split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            (k.to_string(), v.to_string())
        })
        .collect();
    (path, params)
}

fn route(state: &mut State, req: &Request, addr: SocketAddr) -> Reply {
    let (path, params) = split_query(&req.path);

    if let Some(slot) = state
        .failures
        .iter_mut()
        .find(|(frag, n)| *n > 0 && req.path.contains(frag.as_str()))
    {
        slot.1 -= 1;
        return Reply::error(503, "UNAVAILABLE");
    }

    if path == "/token" {
        if state.reject_token_requests {
            return Reply::error(403, "DENIED");
        }
        let token = state.required_token.clone().unwrap_or_default();
        return Reply::json(200, serde_json::json!({"token": token}));
    }

    let Some(rest) = path.strip_prefix("/v2/") else {
        return Reply::error(404, "NOT_FOUND");
    };

    if let Some(token) = &state.required_token {
        let expected = format!("Bearer {token}");
        if req.authorization.as_deref() != Some(expected.as_str()) {
            let challenge = format!(
                "Bearer realm=\"http://{addr}/token\",service=\"mock-registry\",scope=\"repository:{}:pull\"",
                rest.split("/tags/").next().unwrap_or(rest)
            );
            return Reply::error(401, "UNAUTHORIZED").header("WWW-Authenticate", challenge);
        }
    }

    if req.method != "GET" && req.method != "HEAD" {
        return Reply::error(405, "UNSUPPORTED");
    }

    if let Some(name) = rest.strip_suffix("/tags/list") {
        let Some(repo) = state.repos.get(name) else {
            return Reply::error(404, "NAME_UNKNOWN");
        };
        let start = match params.get("last") {
            Some(last) => repo
                .tags
                .iter()
                .position(|t| t == last)
                .map_or(repo.tags.len(), |i| i + 1),
            None => 0,
        };
        let page = params
            .get("n")
            .and_then(|n| n.parse::<usize>().ok())
            .or(state.page_size)
            .unwrap_or(usize::MAX)
            .max(1);
        let end = start.saturating_add(page).min(repo.tags.len());
        let tags = &repo.tags[start..end];
        let mut reply = Reply::json(200, serde_json::json!({"name": name, "tags": tags}));
        if end < repo.tags.len() {
            let link = format!(
                "</v2/{name}/tags/list?n={page}&last={}>; rel=\"next\"",
                tags[tags.len() - 1]
            );
            reply = reply.header("Link", link);
        }
        return reply;
    }

    if let Some((name, reference)) = rest.rsplit_once("/manifests/") {
        let Some(repo) = state.repos.get(name) else {
            return Reply::error(404, "NAME_UNKNOWN");
        };
        let digest = if reference.starts_with("sha256:") {
            reference.to_string()
        } else {
            match repo.tag_targets.get(reference) {
                Some(d) => d.clone(),
                None => return Reply::error(404, "MANIFEST_UNKNOWN"),
            }
        };
        let Some(manifest) = repo.manifests.get(&digest) else {
            return Reply::error(404, "MANIFEST_UNKNOWN");
        };
        let mut reply = Reply::new(200, manifest.body.clone())
            .header("Content-Type", manifest.media_type.clone());
        if !state.omit_digest_header {
            reply = reply.header("Docker-Content-Digest", digest);
        }
        return reply;
    }

    if let Some((_, digest)) = rest.rsplit_once("/blobs/") {
        let Some(blob) = state.blobs.get(digest) else {
            return Reply::error(404, "BLOB_UNKNOWN");
        };
        let mut reply =
            Reply::new(200, blob.clone()).header("Content-Type", "application/octet-stream");
        if state
            .truncated
            .iter()
            .any(|frag| req.path.contains(frag.as_str()))
        {
            reply.send_len = blob.len() / 2;
        }
        return reply;
    }

    Reply::error(404, "NOT_FOUND")
}
