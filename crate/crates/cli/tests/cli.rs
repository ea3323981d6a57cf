use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "data", name].iter().collect()
}

fn expose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expose")).args(args).output().unwrap()
}

fn json_stdout(args: &[&str]) -> Value {
    let out = expose(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zone_analyze_reports_deficits() {
    let case = data("synth20.m");
    let v = json_stdout(&["zone-analyze", "--case", s(&case), "--zone", "12,13,14,15,16,17,18,19,20,21"]);
    assert_eq!(v["lambda_h"], 0);
    assert_eq!(v["gamma_h"], 0);
    assert_eq!(v["has_covering_matching"], true);
    assert_eq!(v["is_acyclic"], true);
    assert_eq!(v["matching_pairs"].as_array().unwrap().len(), 10);
}

#[test]
fn simulate_detect_and_bfs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let case = data("synth20.m");
    let scenario = dir.path().join("scenario.json");
    std::fs::write(&scenario, r#"{"zone_nodes": [12, 13, 14, 15, 16], "failed_lines": [15, 17]}"#).unwrap();
    let obs = dir.path().join("obs.json");
    let out = expose(&["simulate", "--case", s(&case), "--scenario", s(&scenario), "-o", s(&obs)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let v: Value = serde_json::from_str(&std::fs::read_to_string(&obs).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    let observed: Vec<u64> = v["exterior_voltages"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["bus"].as_u64().unwrap())
        .collect();
    assert!(observed.iter().all(|b| !(12..=16).contains(b)));

    let d = json_stdout(&["detect", "--case", s(&case), "--observation", s(&obs)]);
    assert_eq!(d["method"], "exact_linear");
    assert_eq!(d["detected_lines"], serde_json::json!([15, 17]));
    assert!(d["c_p"].as_f64().unwrap() > 99.99);

    let b = json_stdout(&["bfs", "--case", s(&case), "--observation", s(&obs)]);
    assert_eq!(b["detected_lines"], serde_json::json!([15, 17]));
    assert_eq!(b["evaluated"].as_u64().unwrap() + b["skipped_no_solution"].as_u64().unwrap(), 16);
    assert_eq!(b["timings"].as_array().unwrap().len(), 5);

    let e = json_stdout(&["bfs", "--case", s(&case), "--observation", s(&obs), "--early-stop", "--parallel"]);
    assert_eq!(e["detected_lines"], serde_json::json!([15, 17]));
    assert_eq!(e["stopped_early"], true);

    let capped = expose(&["bfs", "--case", s(&case), "--observation", s(&obs), "--cap", "2"]);
    assert!(!capped.status.success());
    assert!(String::from_utf8_lossy(&capped.stderr).contains("16"));
}

#[test]
fn experiment_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let case = data("synth20.m");
    let cfg = dir.path().join("zones.json");
    std::fs::write(
        &cfg,
        r#"{"schema_version": 1, "zones": [{"name": "tree", "nodes": [12, 13, 14, 15]}], "nested": {"seed_nodes": [17], "levels": 2}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = expose(&[
        "experiment",
        "--case",
        s(&case),
        "--zones",
        s(&cfg),
        "--kmax",
        "2",
        "--algs",
        "expose,bfs",
        "--out",
        s(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "timing.csv", "zones.json", "scenarios.jsonl", "excluded.jsonl"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let header = metrics.lines().next().unwrap();
    assert!(header.starts_with("zone,lambda_h,gamma_h,k,algorithm"));
    assert!(!header.contains("seconds"));
    assert!(metrics.lines().any(|l| l.starts_with("tree,0,0,1,expose,3,")));
    assert!(metrics.lines().any(|l| l.starts_with("level2,")));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let case = data("synth20.m");
    let out = expose(&["zone-analyze", "--case", s(&case), "--zone", "999"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zones.json");
    std::fs::write(&cfg, r#"{"schema_version": 7, "zones": [{"name": "a", "nodes": [12]}]}"#).unwrap();
    let out = expose(&["experiment", "--case", s(&case), "--zones", s(&cfg), "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}
