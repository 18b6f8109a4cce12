use std::time::Duration;

use module_forge_core::registry::{
    ClientConfig, ManifestRef, RegistryClient, RegistryError, RetryPolicy,
};
use module_forge_core::{ContainerIdentifier, Digest};
use module_forge_mock::{sha256_digest, ImageSpec, LayerBuilder, MockRegistry};

const REPO: &str = "biocontainers/samtools";

fn id() -> ContainerIdentifier {
    ContainerIdentifier::parse("quay.io/biocontainers/samtools").unwrap()
}

fn client_for(mock: &MockRegistry) -> RegistryClient {
    client_with(mock, |_| {})
}

fn client_with(mock: &MockRegistry, tweak: impl FnOnce(&mut ClientConfig)) -> RegistryClient {
    let mut config = ClientConfig::default();
    config.endpoints.insert("quay.io".into(), mock.url());
    config.retry = RetryPolicy {
        attempts: 3,
        initial_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(20),
    };
    tweak(&mut config);
    RegistryClient::new(config).unwrap()
}

#[test]
fn lists_seeded_tags_in_order() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "a");
    mock.seed_tag(REPO, "b");
    let tags = client_for(&mock).list_tags(&id()).unwrap();
    assert_eq!(tags.tags, ["a", "b"]);
    assert_eq!(tags.identifier, id());
}

#[test]
fn follows_pagination_to_exhaustion() {
    let mock = MockRegistry::start();
    let seeded: Vec<String> = (0..250).map(|i| format!("1.{i}--h_0")).collect();
    for t in &seeded {
        mock.seed_tag(REPO, t);
    }
    let client = client_with(&mock, |c| c.page_size = Some(100));
    let tags = client.list_tags(&id()).unwrap();
    assert_eq!(tags.tags, seeded);
    let pages = mock
        .requests()
        .iter()
        .filter(|r| r.path.contains("tags/list"))
        .count();
    assert_eq!(pages, 3);
}

#[test]
fn server_side_pagination_without_n() {
    let mock = MockRegistry::start();
    mock.set_page_size(Some(7));
    let seeded: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
    for t in &seeded {
        mock.seed_tag(REPO, t);
    }
    assert_eq!(client_for(&mock).list_tags(&id()).unwrap().tags, seeded);
}

#[test]
fn list_tags_is_idempotent() {
    let mock = MockRegistry::start();
    for t in ["1.0", "1.1", "latest"] {
        mock.seed_tag(REPO, t);
    }
    let client = client_for(&mock);
    let first = client.list_tags(&id()).unwrap();
    let second = client.list_tags(&id()).unwrap();
    assert_eq!(first.identifier, second.identifier);
    assert_eq!(first.tags, second.tags);
}

#[test]
fn unknown_repository_is_not_found() {
    let mock = MockRegistry::start();
    let err = client_for(&mock).list_tags(&id()).unwrap_err();
    assert!(matches!(err, RegistryError::NotFound(_)), "{err:?}");
}

#[test]
fn retries_transient_failures() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "1.0");
    mock.fail_next("tags/list", 2);
    let tags = client_for(&mock).list_tags(&id()).unwrap();
    assert_eq!(tags.tags, ["1.0"]);
    assert_eq!(mock.requests().len(), 3);
}

#[test]
fn surfaces_transient_after_retry_budget() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "1.0");
    mock.fail_next("tags/list", 5);
    let err = client_for(&mock).list_tags(&id()).unwrap_err();
    assert!(matches!(err, RegistryError::Transient(_)), "{err:?}");
    assert_eq!(mock.requests().len(), 3);
}

#[test]
fn unreachable_registry_is_transient() {
    let url = {
        let mock = MockRegistry::start();
        mock.url()
    };
    let mut config = ClientConfig::default();
    config.endpoints.insert("quay.io".into(), url);
    config.retry.initial_delay = Duration::from_millis(1);
    let err = RegistryClient::new(config)
        .unwrap()
        .list_tags(&id())
        .unwrap_err();
    assert!(matches!(err, RegistryError::Transient(_)), "{err:?}");
}

#[test]
fn anonymous_token_flow() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "1.0");
    mock.require_token("tok123");
    let client = client_for(&mock);
    assert_eq!(client.list_tags(&id()).unwrap().tags, ["1.0"]);
    // Token is cached: the second call goes straight through.
    mock.clear_requests();
    client.list_tags(&id()).unwrap();
    let reqs = mock.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].authorization.as_deref(), Some("Bearer tok123"));
}

#[test]
fn rejected_token_request_is_auth_failure() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "1.0");
    mock.require_token("tok123");
    mock.reject_token_requests(true);
    let err = client_for(&mock).list_tags(&id()).unwrap_err();
    assert!(matches!(err, RegistryError::AuthFailure(_)), "{err:?}");
}

#[test]
fn static_token_is_sent() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "1.0");
    mock.require_token("static");
    mock.reject_token_requests(true);
    let client = client_with(&mock, |c| c.static_token = Some("static".into()));
    assert_eq!(client.list_tags(&id()).unwrap().tags, ["1.0"]);
}

#[test]
fn resolves_seeded_digest() {
    let mock = MockRegistry::start();
    let digest = mock.seed_tag(REPO, "v1");
    let r = client_for(&mock).resolve_digest(&id(), "v1").unwrap();
    assert_eq!(r.digest.as_str(), digest);
    assert_eq!(r.media_type, module_forge_mock::OCI_MANIFEST);
    assert!(r.size_bytes > 0);
}

#[test]
fn resolves_digest_by_hashing_when_header_missing() {
    let mock = MockRegistry::start();
    let digest = mock.seed_tag(REPO, "v1");
    mock.omit_digest_header(true);
    let r = client_for(&mock).resolve_digest(&id(), "v1").unwrap();
    assert_eq!(r.digest.as_str(), digest);
}

#[test]
fn unknown_tag_is_not_found() {
    let mock = MockRegistry::start();
    mock.seed_tag(REPO, "v1");
    let err = client_for(&mock).resolve_digest(&id(), "nope").unwrap_err();
    assert!(matches!(err, RegistryError::NotFound(_)), "{err:?}");
}

fn sample_image() -> ImageSpec {
    ImageSpec::new(&["PATH=/usr/local/bin:/usr/bin", "LANG=C.UTF-8"])
        .layer(LayerBuilder::new().exe("usr/bin/ls").into_tar_gz())
        .layer(
            LayerBuilder::new()
                .exe("usr/local/bin/samtools")
                .into_tar_gz(),
        )
}

#[test]
fn fetches_image_config() {
    let mock = MockRegistry::start();
    let spec = sample_image();
    let digest = mock.push_image(REPO, &spec);
    mock.tag(REPO, "1.9", &digest);
    let client = client_for(&mock);
    let r = client.resolve_digest(&id(), "1.9").unwrap();
    let config = client.fetch_image_config(&id(), &r).unwrap();
    assert!(config
        .env
        .contains(&"PATH=/usr/local/bin:/usr/bin".to_string()));
    let expected: Vec<String> = spec.layers.iter().map(|l| sha256_digest(l)).collect();
    let got: Vec<String> = config.layer_digests.iter().map(|d| d.to_string()).collect();
    assert_eq!(got, expected);
}

#[test]
fn multi_arch_index_selects_amd64() {
    let mock = MockRegistry::start();
    let amd = ImageSpec::new(&["PATH=/amd64/bin"])
        .layer(LayerBuilder::new().exe("amd64/bin/x").into_tar_gz());
    let arm = ImageSpec::new(&["PATH=/arm64/bin"])
        .layer(LayerBuilder::new().exe("arm64/bin/x").into_tar_gz());
    let index = mock.push_index(REPO, &[("linux", "arm64", &arm), ("linux", "amd64", &amd)]);
    mock.tag(REPO, "1.0", &index);

    let client = client_for(&mock);
    let r = client.resolve_digest(&id(), "1.0").unwrap();
    assert_eq!(
        r.digest.as_str(),
        index,
        "index digest is the installable reference"
    );
    let config = client.fetch_image_config(&id(), &r).unwrap();
    assert_eq!(config.env, ["PATH=/amd64/bin"]);

    let arm_client = client_with(&mock, |c| c.platform = "linux/arm64".parse().unwrap());
    let config = arm_client.fetch_image_config(&id(), &r).unwrap();
    assert_eq!(config.env, ["PATH=/arm64/bin"]);

    let missing = client_with(&mock, |c| c.platform = "linux/s390x".parse().unwrap());
    assert!(matches!(
        missing.fetch_image_config(&id(), &r),
        Err(RegistryError::NotFound(_))
    ));
}

#[test]
fn config_digest_mismatch_is_integrity_error() {
    let mock = MockRegistry::start();
    let declared = sha256_digest(b"the real config");
    mock.insert_blob_raw(&declared, br#"{"config":{"Env":["PATH=/evil"]}}"#.to_vec());
    let manifest = serde_json::json!({
        "schemaVersion": 2,
        "mediaType": module_forge_mock::OCI_MANIFEST,
        "config": {"mediaType": module_forge_mock::OCI_CONFIG, "digest": declared, "size": 15},
        "layers": [],
    });
    let digest = mock.insert_manifest(
        REPO,
        module_forge_mock::OCI_MANIFEST,
        serde_json::to_vec(&manifest).unwrap(),
    );
    mock.tag(REPO, "bad", &digest);
    let client = client_for(&mock);
    let r = client.resolve_digest(&id(), "bad").unwrap();
    let err = client.fetch_image_config(&id(), &r).unwrap_err();
    assert!(matches!(err, RegistryError::Integrity { .. }), "{err:?}");
}

#[test]
fn manifest_digest_mismatch_is_integrity_error() {
    let mock = MockRegistry::start();
    let claimed = sha256_digest(b"something else");
    mock.insert_manifest_raw(
        REPO,
        &claimed,
        module_forge_mock::OCI_MANIFEST,
        b"{\"schemaVersion\":2}".to_vec(),
    );
    let r = ManifestRef {
        media_type: String::new(),
        digest: Digest::parse(&claimed).unwrap(),
        size_bytes: 0,
    };
    let err = client_for(&mock).fetch_image_config(&id(), &r).unwrap_err();
    assert!(matches!(err, RegistryError::Integrity { .. }), "{err:?}");
}

#[test]
fn unknown_manifest_media_type_is_unsupported() {
    let mock = MockRegistry::start();
    let body = br#"{"schemaVersion":1,"name":"x","fsLayers":[]}"#.to_vec();
    let digest = mock.insert_manifest(
        REPO,
        "application/vnd.docker.distribution.manifest.v1+prettyjws",
        body,
    );
    mock.tag(REPO, "old", &digest);
    let client = client_for(&mock);
    let r = client.resolve_digest(&id(), "old").unwrap();
    let err = client.fetch_image_config(&id(), &r).unwrap_err();
    assert!(
        matches!(err, RegistryError::UnsupportedMediaType(_)),
        "{err:?}"
    );
}

#[test]
fn fetch_layer_verifies_hash() {
    let mock = MockRegistry::start();
    let blob: Vec<u8> = (0..1024u32).map(|i| (i % 251) as u8).collect();
    let digest = Digest::parse(&mock.insert_blob(blob.clone())).unwrap();
    let mut out = Vec::new();
    let n = client_for(&mock)
        .fetch_layer(&id(), &digest, &mut out)
        .unwrap();
    assert_eq!(n, 1024);
    assert_eq!(out, blob);
}

#[test]
fn fetch_empty_layer() {
    let mock = MockRegistry::start();
    let digest = Digest::parse(&mock.insert_blob(Vec::new())).unwrap();
    let mut out = Vec::new();
    assert_eq!(
        client_for(&mock)
            .fetch_layer(&id(), &digest, &mut out)
            .unwrap(),
        0
    );
    assert!(out.is_empty());
}

#[test]
fn truncated_layer_retries_then_fails_integrity() {
    let mock = MockRegistry::start();
    let blob = vec![7u8; 4096];
    let digest_str = mock.insert_blob(blob);
    mock.truncate_blob(&digest_str);
    let digest = Digest::parse(&digest_str).unwrap();
    let mut out = Vec::new();
    let err = client_for(&mock)
        .fetch_layer(&id(), &digest, &mut out)
        .unwrap_err();
    assert!(matches!(err, RegistryError::Integrity { .. }), "{err:?}");
    assert!(out.is_empty(), "nothing written on failure");
    let attempts = mock
        .requests()
        .iter()
        .filter(|r| r.path.contains(&digest_str))
        .count();
    assert_eq!(attempts, 3);
}

#[test]
fn corrupted_layer_is_rejected() {
    let mock = MockRegistry::start();
    let claimed = sha256_digest(b"original");
    mock.insert_blob_raw(&claimed, b"tampered".to_vec());
    let mut out = Vec::new();
    let err = client_for(&mock)
        .fetch_layer(&id(), &Digest::parse(&claimed).unwrap(), &mut out)
        .unwrap_err();
    assert!(matches!(err, RegistryError::Integrity { .. }), "{err:?}");
}

#[test]
fn client_is_shareable_across_threads() {
    let mock = MockRegistry::start();
    mock.require_token("t");
    for i in 0..5 {
        mock.seed_tag(REPO, &format!("{i}.0"));
    }
    let client = client_for(&mock);
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| assert_eq!(client.list_tags(&id()).unwrap().tags.len(), 5));
        }
    });
}
