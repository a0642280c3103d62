mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{scan_counts, tree_digest};
use serde_json::Value;

fn agv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = agv(args);
    assert_eq!(out.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth + ingest; returns the manifest path.
fn dataset(dir: &Path, tiles: usize, size: usize, seed: u64) -> std::path::PathBuf {
    let root = dir.join("data");
    let manifest = dir.join("train.jsonl");
    let (tiles, size, seed) = (tiles.to_string(), size.to_string(), seed.to_string());
    ok(&["synth", "--tiles", &tiles, "--size", &size, "--seed", &seed, "--out", p(&root)]);
    ok(&["ingest", "--root", p(&root), "--split", "train", "--out", p(&manifest)]);
    manifest
}

#[test]
fn stats_match_a_raw_scan() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 10, 16, 3);
    let stats = ok(&["stats", "--manifest", p(&manifest)]);
    assert_eq!(stats["records"], 10);
    assert_eq!(stats["split"], "train");
    let counts: Vec<u64> = stats["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(counts, scan_counts(&dir.path().join("data")));
    assert_eq!(stats["class_names"][0], "Background");
}

#[test]
fn oracle_scores_perfectly_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 6, 16, 1);
    let scores = dir.path().join("scores");
    let report = dir.path().join("report.json");
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(&scores);
        ok(&["predict", "--manifest", p(&manifest), "--predictor", "oracle", "--out", p(&scores)]);
        let r = ok(&["evaluate", "--manifest", p(&manifest), "--pred", p(&scores), "--report", p(&report)]);
        assert_eq!(r["miou"], 1.0);
        runs.push((tree_digest(&scores), fs::read(&report).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), 12, 16, 2);
    let mut runs = Vec::new();
    for threads in ["1", "3", "8"] {
        let scores = dir.path().join(format!("s{threads}"));
        let report = dir.path().join(format!("r{threads}.json"));
        ok(&[
            "predict", "--threads", threads, "--seed", "5", "--manifest", p(&manifest),
            "--predictor", "noisy-oracle:0.3", "--tta", "d4", "--out", p(&scores),
        ]);
        ok(&["evaluate", "--threads", threads, "--manifest", p(&manifest), "--pred", p(&scores), "--report", p(&report)]);
        runs.push((tree_digest(&scores), fs::read(&report).unwrap()));
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(agv(&["--help"]).status.code(), Some(0));
    assert_eq!(agv(&["--version"]).status.code(), Some(0));
    assert_eq!(agv(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(agv(&["synth", "--tiles", "2", "--out", p(&out)]).status.code(), Some(1));
    assert!(!out.exists());
    assert_eq!(
        agv(&["synth", "--tiles", "2", "--seed", "1", "--density", "0.1", "--out", p(&out)]).status.code(),
        Some(1)
    );
    assert_eq!(agv(&["stats", "--manifest", p(&dir.path().join("none.jsonl"))]).status.code(), Some(2));

    let manifest = dataset(dir.path(), 4, 8, 0);
    let m = p(&manifest);
    let bad_factor = agv(&["mosaic", "--seed", "1", "--manifest", m, "--factor", "4", "--out", p(&out)]);
    assert_eq!(bad_factor.status.code(), Some(1));
    assert_eq!(agv(&["mosaic", "--manifest", m, "--factor", "2", "--out", p(&out)]).status.code(), Some(1));
    let (empty, report) = (dir.path().join("empty"), dir.path().join("r.json"));
    let (scores, r) = (p(&empty), p(&report));
    assert_eq!(agv(&["evaluate", "--manifest", m, "--pred", scores, "--report", r]).status.code(), Some(2));
    let noisy = ["predict", "--manifest", m, "--predictor", "noisy-oracle:0.2", "--out", scores];
    assert_eq!(agv(&noisy).status.code(), Some(1));
    assert_eq!(
        agv(&["predict", "--manifest", m, "--predictor", "oracle", "--tta", "rot45", "--out", scores]).status.code(),
        Some(1)
    );
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let manifest = dataset(d, 30, 32, 0);
    let stats = ok(&["stats", "--manifest", p(&manifest)]);
    let mut targets: Vec<u64> = stats["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    targets[6] *= 2;
    let targets_path = d.join("targets.json");
    fs::write(&targets_path, serde_json::json!({ "targets": targets }).to_string()).unwrap();

    let resampled = d.join("resampled.jsonl");
    let plan = d.join("plan.json");
    let out = ok(&[
        "resample", "--seed", "42", "--manifest", p(&manifest), "--targets", p(&targets_path),
        "--out", p(&resampled), "--plan-out", p(&plan),
    ]);
    let realized: Vec<u64> = out["realized"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for (r, t) in realized.iter().zip(&targets) {
        assert!(*r as f64 >= 0.9 * *t as f64 && *r as f64 <= 1.25 * *t as f64, "{realized:?} vs {targets:?}");
    }
    let after = ok(&["stats", "--manifest", p(&resampled)]);
    assert_eq!(after["counts"].as_array().unwrap().len(), 9);
    assert_eq!(after["counts"][6].as_u64().unwrap(), realized[6]);

    let mosaic = d.join("mosaic");
    let mosaic_manifest = mosaic.join("manifest.jsonl");
    let m = ok(&["mosaic", "--seed", "9", "--manifest", p(&resampled), "--factor", "2", "--out", p(&mosaic)]);
    assert!(m["records"].as_u64().unwrap() >= 1);

    let oracle = d.join("oracle");
    let noisy = d.join("noisy");
    let mm = p(&mosaic_manifest);
    ok(&["predict", "--manifest", mm, "--predictor", "oracle", "--tta", "d4", "--out", p(&oracle)]);
    ok(&["predict", "--seed", "3", "--manifest", mm, "--predictor", "noisy-oracle:0.5", "--out", p(&noisy)]);
    let report = d.join("reports/oracle.json");
    let r = ok(&["evaluate", "--manifest", mm, "--pred", p(&oracle), "--report", p(&report)]);
    assert_eq!(r["miou"], 1.0);
    let on_disk: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(on_disk, r);

    // an ensemble leaning on the oracle keeps its argmax wherever the oracle is one-hot
    let blend = d.join("blend");
    let inputs = format!("{},{}", p(&oracle), p(&noisy));
    ok(&["ensemble", "--inputs", &inputs, "--weights", "3,1", "--out", p(&blend)]);
    let pngs = d.join("pngs");
    ok(&["labels", "--scores", p(&blend), "--manifest", mm, "--out", p(&pngs)]);
    let r = ok(&["evaluate", "--manifest", mm, "--pred", p(&pngs), "--report", p(&d.join("b.json"))]);
    assert_eq!(r["miou"], 1.0);

    let table = agv(&["evaluate", "--manifest", mm, "--pred", p(&noisy), "--report", p(&d.join("n.json")), "--format", "table"]);
    assert_eq!(table.status.code(), Some(0));
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.lines().next().unwrap().contains("WC(8)"));
    assert_eq!(
        agv(&["ensemble", "--inputs", &inputs, "--weights", "1", "--out", p(&blend)]).status.code(),
        Some(1)
    );
}
