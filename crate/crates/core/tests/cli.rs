use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treemem"))
        .current_dir(dir)
        .arg("--config")
        .arg(dir.join("treemem.toml"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("treemem.toml"), "backend = \"mock\"\nstore_path = \"store\"\n").unwrap();
    let schema = serde_json::json!({"nodes": [
        {"id": "root:g", "business_key": "g", "level": "root", "parent": null},
        {"id": "root:g/tenant:t1", "business_key": "t1", "level": "tenant", "parent": "root:g"},
        {"id": "root:g/tenant:t1/project:p1", "business_key": "p1", "level": "project", "parent": "root:g/tenant:t1"},
        {"id": "root:g/tenant:t1/project:p2", "business_key": "p2", "level": "project", "parent": "root:g/tenant:t1"}
    ]});
    fs::write(dir.path().join("tree.json"), schema.to_string()).unwrap();
    let docs = [
        r#"{"doc_id":"d1","node_business_key":"p1","timestamp":"2026-01-01T00:00:00Z","text":"budget: 400k\nowner: Ana"}"#,
        r#"{"doc_id":"d2","node_business_key":"p2","timestamp":"2026-01-01T00:00:00Z","text":"budget: 9k"}"#,
    ];
    fs::write(dir.path().join("docs.jsonl"), docs.join("\n")).unwrap();
    dir
}

#[test]
fn round_trip_through_persisted_store() {
    let dir = setup();
    let d = dir.path();
    assert!(ok(d, &["tree", "load", "tree.json"]).contains("4 nodes"));
    let ingest: Value = serde_json::from_str(&ok(d, &["ingest", "docs.jsonl"])).unwrap();
    assert_eq!(ingest["accepted"], 2);
    let full: Value = serde_json::from_str(&ok(d, &["index", "--full"])).unwrap();
    assert_eq!(full["usage"]["llm_calls"], 4 * 4);

    let text = ok(d, &["query", "--scope", "p1", "What is the budget for d1?"]);
    assert!(text.starts_with("400k\n"), "{text}");
    assert!(text.contains("root:g/tenant:t1/project:p1"));
    let json: Value =
        serde_json::from_str(&ok(d, &["query", "--scope", "t1", "--json", "--k-qa", "1", "owner for d1"])).unwrap();
    assert_eq!(json["usage"]["llm_calls"], 2);
    assert_eq!(json["hits"]["qa_hits"].as_array().unwrap().len(), 1);

    ok(d, &["dump", "--out", "a.json"]);
    ok(d, &["dump", "--out", "b.json"]);
    let eq: Value = serde_json::from_str(&ok(d, &["check-equivalence", "a.json", "b.json"])).unwrap();
    assert_eq!(eq["identical"], true);

    let del: Value = serde_json::from_str(&ok(d, &["delete", "p2"])).unwrap();
    assert_eq!(del["documents"], 1);
    ok(d, &["index", "--incremental"]);
    ok(d, &["dump", "--out", "b.json"]);
    let out = run(d, &["check-equivalence", "a.json", "b.json"]);
    assert!(!out.status.success());
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["identical"], false);
}

#[test]
fn failures_are_json_on_stderr() {
    let dir = setup();
    let out = run(dir.path(), &["query", "--scope", "nowhere", "hi"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "unknown_scope");
    let out = run(dir.path(), &["memory", "p1"]);
    assert_eq!(serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"], "unknown_scope");
    fs::write(dir.path().join("bad.toml"), "backend = 3").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_treemem"))
        .args(["--config", dir.path().join("bad.toml").to_str().unwrap(), "dump"])
        .output()
        .unwrap();
    assert_eq!(serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"], "config");
}

#[test]
fn bench_run_writes_report() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("corpus.json"), r#"{"tenants":2,"seats_per_tenant":2,"projects_per_seat":2,"queries":8}"#)
        .unwrap();
    for system in ["hltm", "flatrag"] {
        let out = run(d, &["bench", "run", "--corpus", "corpus.json", "--system", system, "--out", "r.json"]);
        assert!(out.status.success());
        assert!(String::from_utf8_lossy(&out.stderr).contains(system));
        let r: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
        assert_eq!(r["queries"], 16);
        let calls = if system == "hltm" { 2.0 } else { 1.0 };
        assert_eq!(r["llm_calls"]["mean"], calls);
    }
}

#[test]
fn profile_commands() {
    let dir = setup();
    let d = dir.path();
    let qs = (1..=4)
        .map(|i| format!(r#"{{"text":"what is the budget for d{i}?","timestamp":"2026-01-01T00:00:00Z"}}"#))
        .collect::<Vec<_>>()
        .join("\n");
    fs::write(d.join("q.jsonl"), qs).unwrap();
    let p: Value = serde_json::from_str(&ok(d, &["profile", "mine", "--queries", "q.jsonl", "--all"])).unwrap();
    let id = p["id"].as_str().unwrap();
    assert_eq!(p["min_support"], 3);
    let out = run(d, &["profile", "apply", id]);
    assert_eq!(serde_json::from_slice::<Value>(&out.stderr).unwrap()["error"], "not_approved");
    ok(d, &["profile", "approve", id]);
    ok(d, &["profile", "apply", id]);
    let reg: Value = serde_json::from_str(&ok(d, &["profile", "list"])).unwrap();
    assert_eq!(reg["active"], id);
}
