mod common;

use std::process::Command;

use vqastab::modelio::mock::{MockConfig, MockServer};
use vqastab::pipeline::{cmd_analyze, cmd_perturb, cmd_report, PipelineError, RunConfig};

fn png_count(cfg: &RunConfig) -> usize {
    common::count_files(&cfg.stage_dir("perturb").join("images"), "png")
}

#[tokio::test(flavor = "multi_thread")]
async fn perturb_writes_56_images_then_nothing() {
    let server = MockServer::start(MockConfig::default()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config(dir.path(), &server.base_url(), 2);
    let first = cmd_perturb(&cfg).await.unwrap();
    assert_eq!(png_count(&cfg), 56);
    assert!(first.files_written >= 56 + 2);
    for name in ["visual_manifest.jsonl", "text_manifest.jsonl", "rotation_flags.json", "meta.json"] {
        assert!(cfg.stage_dir("perturb").join(name).exists(), "{name}");
    }
    let manifest = std::fs::read_to_string(cfg.stage_dir("perturb").join("text_manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 2 * 11);

    let again = cmd_perturb(&cfg).await.unwrap();
    assert_eq!(again.files_written, 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn rotation_off_gives_26_per_sample() {
    let server = MockServer::start(MockConfig::default()).await.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_config(dir.path(), &server.base_url(), 2);
    cfg.suite.rotation = false;
    cmd_perturb(&cfg).await.unwrap();
    // identity + shift 8 + pad/crop 8 + scale 1 + scale-pad 2 + overlay 6
    assert_eq!(png_count(&cfg), 2 * (1 + 8 + 8 + 1 + 2 + 6));
}

#[test]
fn analyze_without_run_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config(dir.path(), "http://127.0.0.1:9/v1", 2);
    std::fs::create_dir_all(cfg.stage_dir("perturb")).unwrap();
    std::fs::write(cfg.stage_dir("perturb").join("rotation_flags.json"), "{}").unwrap();
    let err = cmd_analyze(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::MissingInput { stage: "run", .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert_eq!(err.to_json()["error"]["run_first"], "run");
}

#[test]
fn report_without_analyze_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config(dir.path(), "http://127.0.0.1:9/v1", 2);
    let err = cmd_report(&cfg).unwrap_err();
    assert_eq!(err.to_json()["error"]["run_first"], "analyze");
}

#[test]
fn cli_reports_machine_readable_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config(dir.path(), "http://127.0.0.1:9/v1", 2);
    let config = dir.path().join("config.toml");
    std::fs::write(&config, toml::to_string(&cfg).unwrap()).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_vqastab"))
        .args(["analyze", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "missing_input");
    assert!(err["error"]["message"].as_str().unwrap().contains("perturb"));

    let out = Command::new(env!("CARGO_BIN_EXE_vqastab"))
        .args(["run", "--config"])
        .arg(dir.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::small_config(dir.path(), "http://127.0.0.1:9/v1", 2);
    cfg.proxies[0].name = "target".into();
    assert!(matches!(cfg.validate(), Err(PipelineError::Validation(_))));
    cfg.proxies[0].name = "bad/name".into();
    assert!(cfg.validate().is_err());
}
