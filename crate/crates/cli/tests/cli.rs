use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy_corpus.conllx")
}

fn vkc(workspace: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vkc"))
        .arg("--workspace")
        .arg(workspace)
        .arg("--offline")
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RUST_BACKTRACE")
        .output()
        .expect("vkc runs")
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("vkc.toml");
    std::fs::write(
        &path,
        "n_subjects = 6\nn_actions = 10\nn_places = 10\ncontexts_per_subject = 2\ntargets_per_context = 2\n",
    )
    .unwrap();
    path
}

#[test]
fn offline_build_validates_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let config = small_config(dir.path());
    let config = config.to_str().unwrap();
    let corpus = toy_corpus();

    let build = json(&vkc(&ws, &["--config", config, "build", corpus.to_str().unwrap()]));
    let stages: Vec<_> = build
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(
        stages,
        ["ingest", "extract", "score-contexts", "score-targets", "gen-images", "gen-qa"]
    );

    let validate = vkc(&ws, &["--config", config, "validate"]);
    assert_eq!(json(&validate)["violations"].as_array().unwrap().len(), 0);

    let eval = json(&vkc(
        &ws,
        &["--config", config, "evaluate", "--model", "sim", "--strategy", "plain,cot"],
    ));
    assert_eq!(eval["stage"], "evaluate");
    assert_eq!(eval["network_calls"], 0);
    assert!(ws.join("responses.jsonl").exists());
    assert!(ws.join("report.json").exists());
}

#[test]
fn gate_failure_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("ws");
    let config = small_config(dir.path());
    let config = config.to_str().unwrap();
    json(&vkc(&ws, &["--config", config, "ingest", toy_corpus().to_str().unwrap()]));
    json(&vkc(&ws, &["--config", config, "extract"]));

    let out = vkc(&ws, &["--config", config, "score-contexts"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("components"));

    let labeled = json(&vkc(&ws, &["--config", config, "review-auto", "--stage", "components"]));
    assert!(labeled["labeled"].as_u64().unwrap() > 0);
    let scored = json(&vkc(&ws, &["--config", config, "score-contexts"]));
    assert_eq!(scored["skipped"], false);
}

#[test]
fn validate_reports_missing_workspace() {
    let dir = tempfile::tempdir().unwrap();
    let out = vkc(&dir.path().join("empty"), &["validate"]);
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!report["violations"].as_array().unwrap().is_empty());
}

#[test]
fn rejects_bad_reject_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = vkc(
        &dir.path().join("ws"),
        &["build", toy_corpus().to_str().unwrap(), "--image-reject-rate", "1.5"],
    );
    assert!(!out.status.success());
}
