use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn onramp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onramp"))
        .args(args)
        .output()
        .expect("spawn onramp")
}

fn ok(args: &[&str]) -> String {
    let out = onramp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_sweep(dir: &Path) -> String {
    let cfg = dir.join("sweep.toml");
    fs::write(&cfg, "count = 2\n").unwrap();
    let manifest = dir.join("suite.json");
    ok(&[
        "gen",
        "--suite",
        "headway-sweep",
        "--suite-config",
        cfg.to_str().unwrap(),
        "--out",
        manifest.to_str().unwrap(),
    ]);
    manifest.to_str().unwrap().to_string()
}

#[test]
fn gen_writes_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_sweep(dir.path());
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    let a = ok(&["gen", "--suite", "random", "--seed", "7"]);
    let b = ok(&["gen", "--suite", "random", "--seed", "7"]);
    assert_eq!(a, b);
    assert_ne!(a, ok(&["gen", "--suite", "random", "--seed", "8"]));
}

#[test]
fn batch_then_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_sweep(dir.path());
    let out = dir.path().join("batch");
    let csv = ok(&[
        "batch",
        "--suite",
        &manifest,
        "--variant",
        "full",
        "--threads",
        "1",
        "--traces",
        "--out",
        out.to_str().unwrap(),
    ]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert!(lines[0].starts_with("Variant,Episodes,Success Rate (%),Avg. Merge Time (s)"));
    assert!(lines[1].starts_with("full,2,"));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap(), csv);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["variants"][0]["episodes"].as_array().unwrap().len(), 2);

    let mut traces: Vec<String> = fs::read_dir(out.join("traces").join("full"))
        .unwrap()
        .map(|e| e.unwrap().path().to_str().unwrap().to_string())
        .collect();
    traces.sort();
    assert_eq!(traces.len(), 2);
    let mut args = vec!["replay"];
    args.extend(traces.iter().rev().map(String::as_str));
    assert_eq!(ok(&args), csv);
}

#[test]
fn sim_trace_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_sweep(dir.path());
    let trace = dir.path().join("out.jsonl");
    let summary = ok(&[
        "sim",
        "--scenario",
        &manifest,
        "--index",
        "1",
        "--trace",
        trace.to_str().unwrap(),
    ]);
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["outcome"]["kind"], "success");
    let rdir = dir.path().join("replay");
    ok(&[
        "replay",
        trace.to_str().unwrap(),
        "--out",
        rdir.to_str().unwrap(),
    ]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rdir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(
        json["variants"][0]["episodes"][0]["metrics"],
        summary["metrics"]
    );
}

#[test]
fn plan_lists_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = small_sweep(dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["plan", "--scenario", &manifest])).unwrap();
    let cands = report["candidates"].as_array().unwrap();
    assert!(cands.len() > 1);
    assert_eq!(cands.iter().filter(|c| c["selected"] == true).count(), 1);
    for key in [
        "curvature",
        "jerk",
        "curvature_rate",
        "velocity",
        "consistency",
        "center",
        "obs",
        "total",
    ] {
        assert!(
            cands.iter().all(|c| c["breakdown"][key].is_number()),
            "{key}"
        );
    }
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!onramp(&[]).status.success());
    assert!(
        !onramp(&["batch", "--suite", "headway-sweep", "--variant", "nope"])
            .status
            .success()
    );
    assert!(!onramp(&["sim", "--scenario", "/nonexistent/s.json"])
        .status
        .success());
    assert!(!onramp(&["replay"]).status.success());
    assert!(
        !onramp(&["batch", "--suite", "headway-sweep", "--threads", "0"])
            .status
            .success()
    );
}
