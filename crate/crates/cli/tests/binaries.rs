use std::path::PathBuf;
use std::process::Command;

fn suite_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/data/suite")
}

fn bench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_seaas-bench")).args(args).output().unwrap()
}

#[test]
fn bench_run_writes_the_results_table() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("results.csv");
    let suite = suite_dir();
    let args = ["run", "--suite", suite.to_str().unwrap(), "--out", csv.to_str().unwrap()];

    let out = bench(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(first.lines().count(), 6);

    for row in first.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        let (detected, undetected, injected): (u64, u64, u64) =
            (cols[3].parse().unwrap(), cols[4].parse().unwrap(), cols[2].parse().unwrap());
        assert_eq!(detected + undetected, injected);
        assert!(cols[6].parse::<f64>().unwrap() >= 13.0, "{row}");
        assert!(cols[7].parse::<f64>().unwrap() >= 0.928, "{row}");
        assert!(cols[10].parse::<f64>().unwrap() <= 0.25, "{row}");
    }

    let again = bench(&args);
    assert!(again.status.success());
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), first, "same seed, same table");
}

#[test]
fn bench_generate_reproduces_the_shipped_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = bench(&["generate", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    for t in 1..=5 {
        for u in 1..=10 {
            let rel = format!("trial_{t}/user_{u}.jsonl");
            let fresh = std::fs::read_to_string(dir.path().join(&rel)).unwrap();
            let shipped = std::fs::read_to_string(suite_dir().join(&rel)).unwrap();
            assert!(fresh == shipped, "{rel} differs");
        }
    }
}

#[test]
fn bench_rejects_a_missing_suite() {
    let out = bench(&["run", "--suite", "/nonexistent/suite"]);
    assert!(!out.status.success());
}

#[test]
fn agent_runs_a_script_locally() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let script = suite_dir().join("trial_1/user_1.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_agent"))
        .args(["run", "--script", script.to_str().unwrap(), "--mode", "local", "--report", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["mode"], "LOCAL");
    assert!(json["work"]["total"].as_u64().unwrap() > 0);
}
