use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn desk() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets/desk.toml")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_objsearch"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn genmap_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("a.map");
    ok(&[
        "genmap",
        "--width",
        "24",
        "--height",
        "18",
        "--rooms",
        "4",
        "--seed",
        "3",
        "--out",
        path(&file),
    ]);
    let stdout = ok(&[
        "genmap", "--width", "24", "--height", "18", "--rooms", "4", "--seed", "3",
    ])
    .stdout;
    let text = fs::read_to_string(&file).unwrap();
    assert_eq!(text.as_bytes(), stdout.as_slice());
    let rows: Vec<&str> = text.lines().filter(|l| !l.contains('=')).collect();
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().all(|r| r.len() == 24));
}

#[test]
fn eval_writes_records_tables_and_manifest() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("eval");
    let scenario = desk();
    ok(&[
        "eval",
        "--scenario",
        path(&scenario),
        "--out",
        path(&out),
        "--episodes",
        "4",
        "--method",
        "rws",
        "--method",
        "pcss",
    ]);
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(
        records.lines().next().unwrap(),
        "method,episode,outcome,actions,distance"
    );
    assert_eq!(records.lines().count(), 1 + 2 * 4);
    assert!(fs::read_to_string(out.join("tables.txt")).unwrap().contains("PCSS"));
    assert!(out.join("metrics.csv").exists());

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scenario_name"], "desk");
    assert_eq!(manifest["episodes"], 4);
    assert_eq!(manifest["methods"], serde_json::json!(["rws", "pcss"]));
    assert_eq!(manifest["start_poses"].as_array().unwrap().len(), 4);
    assert_eq!(manifest["scenario_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["checkpoint"].is_null());
}

#[test]
fn bbdps_requires_a_checkpoint() {
    let dir = TempDir::new().unwrap();
    let scenario = desk();
    let out = run(&[
        "eval",
        "--scenario",
        path(&scenario),
        "--out",
        path(dir.path()),
        "--method",
        "bbdps",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
}

#[test]
fn bench_is_deterministic_and_checkpoint_reloads() {
    let dir = TempDir::new().unwrap();
    let scenario = desk();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "bench",
            "--scenario",
            path(&scenario),
            "--out",
            path(out),
            "--episodes",
            "6",
            "--train-episodes",
            "40",
        ]);
    }
    let ra = fs::read(a.join("records.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("records.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("checkpoint.osqn")).unwrap(),
        fs::read(b.join("checkpoint.osqn")).unwrap()
    );
    assert_eq!(fs::read_to_string(a.join("train_log.csv")).unwrap().lines().count(), 41);

    // Evaluating the saved network reproduces the bench's BBDPS rows.
    let c = dir.path().join("c");
    let ckpt = a.join("checkpoint.osqn");
    ok(&[
        "eval",
        "--scenario",
        path(&scenario),
        "--out",
        path(&c),
        "--episodes",
        "6",
        "--method",
        "bbdps",
        "--checkpoint",
        path(&ckpt),
    ]);
    let bench_rows: Vec<String> = String::from_utf8(ra)
        .unwrap()
        .lines()
        .filter(|l| l.starts_with("bbdps"))
        .map(String::from)
        .collect();
    let eval_rows: Vec<String> = fs::read_to_string(c.join("records.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(String::from)
        .collect();
    assert_eq!(bench_rows, eval_rows);
}

#[test]
fn train_then_replay() {
    let dir = TempDir::new().unwrap();
    let scenario = desk();
    let train = dir.path().join("train");
    ok(&[
        "train",
        "--scenario",
        path(&scenario),
        "--out",
        path(&train),
        "--episodes",
        "20",
        "--seed",
        "9",
    ]);
    let ckpt = train.join("checkpoint.osqn");
    assert!(ckpt.exists());

    let replay = dir.path().join("replay");
    let stdout = ok(&[
        "replay",
        "--scenario",
        path(&scenario),
        "--out",
        path(&replay),
        "--method",
        "bbdps",
        "--episode",
        "2",
        "--checkpoint",
        path(&ckpt),
    ])
    .stdout;
    assert!(String::from_utf8_lossy(&stdout).starts_with("BBDPS episode 2:"));
    let trace = fs::read_to_string(replay.join("trace.csv")).unwrap();
    let steps = trace.lines().count() - 1;
    assert!(steps >= 1);
    assert_eq!(fs::read_dir(replay.join("belief")).unwrap().count(), steps);

    let out = run(&[
        "replay",
        "--scenario",
        path(&scenario),
        "--out",
        path(&replay),
        "--method",
        "pcss",
        "--episode",
        "100",
    ]);
    assert!(!out.status.success());
}
