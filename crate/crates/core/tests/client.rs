mod common;

use vqastab::fixture::{mock_endpoint, synthetic_image};
use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::modelio::{ChatClient, DiskCache, ModelError, REFUSAL_TOKEN};
use vqastab::pipeline::{cmd_perturb, cmd_run};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn png() -> Vec<u8> {
    vqastab::corpus::encode_png(&synthetic_image(&mut ChaCha8Rng::seed_from_u64(9), 224, 160))
}

#[tokio::test]
async fn two_429s_then_success() {
    let server = MockServer::start(MockConfig {
        fail_first: 2,
        fail_status: 429,
        ..Default::default()
    })
    .await
    .unwrap();
    let client = ChatClient::new(mock_endpoint("m", "mock-m", &server.base_url()), None).unwrap();
    let reply = client.query_png(&png(), "Is there a red square?").await.unwrap();
    assert_eq!(server.stats().requests(), 3);
    assert!(reply.normalized == "yes" || reply.normalized == "no");
    assert!(reply.latency_ms >= 20, "latency includes the backoff: {}", reply.latency_ms);
}

#[tokio::test]
async fn retries_are_bounded() {
    let server = MockServer::start(MockConfig {
        fail_first: 100,
        fail_status: 503,
        ..Default::default()
    })
    .await
    .unwrap();
    let client = ChatClient::new(mock_endpoint("m", "mock-m", &server.base_url()), None).unwrap();
    assert!(client.query_png(&png(), "Is it red?").await.is_err());
    assert_eq!(server.stats().requests(), 4);
}

#[tokio::test]
async fn permanent_error_is_not_retried() {
    let server = MockServer::start(MockConfig {
        fail_first: 1,
        fail_status: 400,
        ..Default::default()
    })
    .await
    .unwrap();
    let client = ChatClient::new(mock_endpoint("m", "mock-m", &server.base_url()), None).unwrap();
    let err = client.query_png(&png(), "Is it red?").await.unwrap_err();
    assert!(!err.is_transient(), "{err}");
    assert_eq!(server.stats().requests(), 1);
}

#[tokio::test]
async fn cached_query_makes_no_call() {
    let server = MockServer::start(MockConfig::default()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_endpoint("m", "mock-m", &server.base_url());
    let first = ChatClient::new(cfg.clone(), Some(DiskCache::new(dir.path()).unwrap())).unwrap();
    let a = first.query_png(&png(), "Is it red?").await.unwrap();
    assert_eq!(server.stats().requests(), 1);

    let fresh = ChatClient::new(cfg, Some(DiskCache::new(dir.path()).unwrap())).unwrap();
    let b = fresh.query_png(&png(), "Is it red?").await.unwrap();
    assert_eq!(a, b);
    assert_eq!(server.stats().requests(), 1);

    fresh.query_png(&png(), "Is it blue?").await.unwrap();
    assert_eq!(server.stats().requests(), 2);
}

#[tokio::test]
async fn empty_question_is_rejected_locally() {
    let server = MockServer::start(MockConfig::default()).await.unwrap();
    let client = ChatClient::new(mock_endpoint("m", "mock-m", &server.base_url()), None).unwrap();
    let err = client.query_png(&png(), "  ").await.unwrap_err();
    assert!(matches!(err, ModelError::InvalidRequest(_)));
    assert_eq!(server.stats().requests(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn in_flight_never_exceeds_max_parallel() {
    let server = MockServer::start(MockConfig {
        delay_ms: 30,
        ..Default::default()
    })
    .await
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_config(dir.path(), &server.base_url(), 2);
    cfg.target.max_parallel = 3;
    cfg.proxies.clear();
    cmd_perturb(&cfg).await.unwrap();
    cmd_run(&cfg).await.unwrap();
    let peak = server.stats().max_in_flight();
    assert!(peak <= 3, "peak {peak}");
    assert!(peak >= 2, "pool never ran in parallel: {peak}");
}

#[tokio::test(flavor = "multi_thread")]
async fn refusing_endpoint_yields_78_refusal_records() {
    let server = MockServer::start(MockConfig {
        refuse_all: true,
        ..Default::default()
    })
    .await
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_config(dir.path(), &server.base_url(), 2);
    cfg.proxies.clear();
    cmd_perturb(&cfg).await.unwrap();
    let text_calls = server.stats().requests();
    cmd_run(&cfg).await.unwrap();

    let log = std::fs::read_to_string(dir.path().join("out/run/target.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2 * 28 + 2 * 11);
    assert!(records.iter().all(|r| r["normalized"] == REFUSAL_TOKEN && r.get("error").is_none()));
    // the original question on the original image is asked once per sample
    assert_eq!(server.stats().requests() - text_calls, 76);
}
