use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn demo(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/demo").join(file)
}

fn hiermem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hiermem"))
        .args(args)
        .env_remove("HIERMEM_API_KEY")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn built_store(dir: &Path) -> PathBuf {
    let store = dir.join("store.jsonl");
    let cfg = demo("config.json");
    let o = hiermem(&["ingest", s(&demo("corpus.jsonl")), "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = hiermem(&["build-hierarchy", "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    store
}

#[test]
fn full_pipeline_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let store = built_store(dir.path());
    let cfg = demo("config.json");
    let report = dir.path().join("ask.json");
    let o = hiermem(&[
        "--json",
        "--output",
        s(&report),
        "ask",
        "Which cities did Dave travel to in 2023?",
        "--store",
        s(&store),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["answer"].as_str().unwrap().contains("Detroit"));
    assert_eq!(v["trace"]["selection_steps"].as_array().unwrap().len(), 4);
    assert_eq!(std::fs::read(&report).unwrap(), [o.stdout.as_slice()].concat());

    let o = hiermem(&["eval", s(&demo("cases.jsonl")), "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("overall") && table.contains("adversarial cases excluded"), "{table}");

    let o = hiermem(&["inspect", "--store", s(&store), "path", "Geography", "Geographical Locations", "Detroit"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("path exists"));
}

#[test]
fn json_reports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let store = built_store(dir);
        let o = hiermem(&[
            "--json",
            "eval",
            s(&demo("cases.jsonl")),
            "--store",
            s(&store),
            "--config",
            s(&demo("config.json")),
        ]);
        assert_eq!(code(&o), 0);
        o.stdout
    };
    assert_eq!(run(a.path()), run(b.path()));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&hiermem(&["frobnicate"])), 1);
    assert_eq!(code(&hiermem(&["ask"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let store = built_store(dir.path());
    let cfg = demo("config.json");
    let o = hiermem(&["ask", "q", "--store", s(&store), "--config", s(&cfg), "--route", "sideways"]);
    assert_eq!(code(&o), 1);
    let o = hiermem(&["ask", "q", "--store", s(&store), "--config", s(&cfg), "--k", "0"]);
    assert_eq!(code(&o), 1);
    let o = hiermem(&["ask", "q", "--store", s(&store), "--config", s(&dir.path().join("nope.json"))]);
    assert_eq!(code(&o), 1);
    assert_eq!(code(&hiermem(&["--help"])), 0);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = demo("config.json");
    let text = std::fs::read_to_string(demo("corpus.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "not json";
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let store = dir.path().join("store.jsonl");
    let o = hiermem(&["ingest", s(&bad), "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"));

    // missing store
    let o = hiermem(&["inspect", "--store", s(&store), "stats"]);
    assert_eq!(code(&o), 2);

    // System-2 on a store without a hierarchy
    let o = hiermem(&["ingest", s(&demo("corpus.jsonl")), "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 0);
    let o = hiermem(&["ask", "Which cities?", "--store", s(&store), "--config", s(&cfg), "--route", "s2"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_corpus_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let store = dir.path().join("store.jsonl");
    let o = hiermem(&["ingest", s(&empty), "--store", s(&store), "--config", s(&demo("config.json"))]);
    assert_eq!(code(&o), 0);
    let o = hiermem(&["--json", "inspect", "--store", s(&store), "stats"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for key in ["episodes", "entities", "relation_edges", "categories"] {
        assert_eq!(v[key], 0, "{key}");
    }
}

#[test]
fn unreachable_oracle_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.json");
    std::fs::write(
        &cfg,
        r#"{"oracle": {"kind": "remote", "base_url": "http://127.0.0.1:9", "model": "m", "timeout_secs": 1}}"#,
    )
    .unwrap();
    let store = dir.path().join("store.jsonl");
    let o = hiermem(&["ingest", s(&demo("corpus.jsonl")), "--store", s(&store), "--config", s(&cfg)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
