use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use breathtrace::summary::Summary;
use breathtrace::table::{read_metrics, read_predictions, read_table};
use tempfile::TempDir;

const DURATION: &str = "90";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_breathtrace"));
    for (key, _) in std::env::vars() {
        if key.starts_with("BT_") {
            cmd.env_remove(key);
        }
    }
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    serde_json::from_str(stderr.trim()).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, subjects: usize) -> Vec<PathBuf> {
    let out = dir.join("synth");
    ok(&["synth", "--subjects", &subjects.to_string(), "--duration", DURATION, "--out-dir", s(&out)]);
    (1..=subjects).map(|i| out.join(format!("subject_{i:02}.csv"))).collect()
}

fn join(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| s(p)).collect::<Vec<_>>().join(",")
}

#[test]
fn synth_writes_seeded_recordings() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 2);
    let summary = Summary::read(&dir.path().join("synth/summary.json")).unwrap();
    assert_eq!(summary.command, "synth");
    let seeds: Vec<_> = summary.subjects.iter().map(|e| e.seed).collect();
    assert_eq!(seeds, vec![Some(0), Some(1)]);
    let table = read_table(&files[0]).unwrap();
    assert_eq!(table.header, ["t", "flow", "abd", "tho"]);
    assert_eq!(table.rows(), 900);
    assert_ne!(fs::read(&files[0]).unwrap(), fs::read(&files[1]).unwrap());

    let again = dir.path().join("again");
    ok(&["synth", "--subjects", "1", "--duration", DURATION, "--out-dir", s(&again)]);
    assert_eq!(fs::read(&files[0]).unwrap(), fs::read(again.join("subject_01.csv")).unwrap());

    let reseeded = dir.path().join("reseeded");
    ok(&["synth", "--seed", "1", "--duration", DURATION, "--out-dir", s(&reseeded)]);
    assert_eq!(fs::read(&files[1]).unwrap(), fs::read(reseeded.join("subject_01.csv")).unwrap());
}

#[test]
fn predict_then_evaluate_reproduces_metrics() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 2);
    let pred = dir.path().join("pred");
    ok(&["predict", "--data", &join(&files), "--out-dir", s(&pred)]);

    let summary = Summary::read(&pred.join("summary.json")).unwrap();
    let rows = read_metrics(&pred.join("metrics.csv")).unwrap();
    for entry in &summary.subjects {
        let scored = rows.iter().filter(|r| r.subject == entry.id).count();
        assert_eq!(Some(scored), entry.predicted_windows, "{}", entry.id);
        assert_eq!(Some(scored), entry.scored_windows);
        assert_eq!(entry.predicted_windows.unwrap() + entry.skipped_windows.unwrap(), 3);
        let p = read_predictions(&pred.join(format!("{}_predictions.csv", entry.id))).unwrap();
        assert_eq!(p.header, ["t", "mean", "sd"]);
        assert_eq!(p.rows(), entry.samples);
    }
    assert!(summary.medians.unwrap().rmse_reduction.unwrap() > 0.0);

    let eval = dir.path().join("eval");
    ok(&["evaluate", "--data", &join(&files), "--predictions", s(&pred), "--out-dir", s(&eval)]);
    assert_eq!(fs::read(pred.join("metrics.csv")).unwrap(), fs::read(eval.join("metrics.csv")).unwrap());
    let rescored = Summary::read(&eval.join("summary.json")).unwrap();
    assert_eq!(rescored.medians, summary.medians);
}

#[test]
fn reruns_and_worker_counts_give_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 2);
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    ok(&["predict", "--mode", "inter", "--data", &join(&files), "--out-dir", s(&outs[0])]);
    ok(&["predict", "--mode", "inter", "--data", &join(&files), "--out-dir", s(&outs[1])]);
    ok(&["predict", "--mode", "inter", "--jobs", "1", "--data", &join(&files), "--out-dir", s(&outs[2])]);
    for name in ["summary.json", "metrics.csv", "subject_01_predictions.csv", "subject_02_predictions.csv"] {
        let first = fs::read(outs[0].join(name)).unwrap();
        for other in &outs[1..] {
            assert_eq!(first, fs::read(other.join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn environment_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("env");
    let status = bin()
        .args(["synth", "--duration", "40"])
        .env("BT_OUT_DIR", &out)
        .env("BT_SEED", "9")
        .output()
        .unwrap();
    assert!(status.status.success());
    let summary = Summary::read(&out.join("summary.json")).unwrap();
    assert_eq!(summary.seed, 9);
    assert_eq!(summary.config.seed, 9);
    assert_eq!(summary.subjects[0].seed, Some(9));
}

#[test]
fn decompose_writes_harmonics_and_features() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 1);
    let out = dir.path().join("dec");
    ok(&["decompose", "--data", s(&files[0]), "--out-dir", s(&out)]);
    let harmonics = read_table(&out.join("subject_01_harmonics.csv")).unwrap();
    assert_eq!(harmonics.header.len(), 3 + 2 * 4 * 3);
    assert_eq!(harmonics.rows(), 900);
    let amp = harmonics.column("abd_amp1").unwrap();
    assert!(amp[100..800].iter().all(|a| *a > 0.0));
    let features = read_table(&out.join("subject_01_features.csv")).unwrap();
    assert_eq!(features.header.len(), 1 + 24);
    assert_eq!(features.rows(), 900);
    for c in &features.columns {
        assert!(c.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn prediction_without_flow_in_inter_mode() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 2);
    let table = read_table(&files[1]).unwrap();
    let mut text = String::from("t,abd,tho\n");
    let (t, abd, tho) = (table.column("t").unwrap(), table.column("abd").unwrap(), table.column("tho").unwrap());
    for i in 0..table.rows() {
        text.push_str(&format!("{},{},{}\n", t[i], abd[i], tho[i]));
    }
    let unlabelled = dir.path().join("night.csv");
    fs::write(&unlabelled, text).unwrap();

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mode": "inter", "train_subjects": ["subject_01"], "test_subjects": ["night"]}"#).unwrap();
    let out = dir.path().join("pred");
    let data = format!("{},{}", s(&files[0]), s(&unlabelled));
    ok(&["predict", "--config", s(&cfg), "--data", &data, "--out-dir", s(&out)]);
    let p = read_predictions(&out.join("night_predictions.csv")).unwrap();
    assert_eq!(p.rows(), 900);
    assert!(p.column("mean").unwrap().iter().any(|m| m.is_finite()));
    let summary = Summary::read(&out.join("summary.json")).unwrap();
    let night = summary.subjects.iter().find(|e| e.id == "night").unwrap();
    assert_eq!(night.scored_windows, None);
    assert!(read_metrics(&out.join("metrics.csv")).unwrap().is_empty());

    let intra = run(&["predict", "--data", s(&unlabelled), "--out-dir", s(&out)]);
    assert_eq!(intra.status.code(), Some(3));
    assert_eq!(error_json(&intra)["error"]["code"], "missing_flow");
}

#[test]
fn errors_are_reported_as_json_with_category_exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");

    let missing = run(&["predict", "--data", s(&dir.path().join("absent.csv")), "--out-dir", s(&out)]);
    assert_eq!(missing.status.code(), Some(5));
    assert_eq!(error_json(&missing)["error"]["category"], "io");

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"window_sec": 30}"#).unwrap();
    let parse = run(&["synth", "--config", s(&bad_cfg), "--out-dir", s(&out)]);
    assert_eq!(parse.status.code(), Some(2));
    assert_eq!(error_json(&parse)["error"]["code"], "config_parse");

    let invalid_cfg = dir.path().join("invalid.json");
    fs::write(&invalid_cfg, r#"{"neighbors": 0}"#).unwrap();
    let invalid = run(&["synth", "--config", s(&invalid_cfg), "--out-dir", s(&out)]);
    assert_eq!(invalid.status.code(), Some(2));
    assert_eq!(error_json(&invalid)["error"]["code"], "config_invalid");

    let dup = dir.path().join("dup.csv");
    fs::write(&dup, "t,flow,abd,tho\n0,1,1,1\n0,1,1,1\n0.2,1,1,1\n").unwrap();
    let data = run(&["predict", "--data", s(&dup), "--out-dir", s(&out)]);
    assert_eq!(data.status.code(), Some(3));
    let err = error_json(&data);
    assert_eq!(err["error"]["category"], "data");
    assert_eq!(err["error"]["code"], "nonuniform_sampling");

    let jobs = run(&["predict", "--jobs", "0", "--data", s(&dup), "--out-dir", s(&out)]);
    assert_eq!(jobs.status.code(), Some(2));
}

#[test]
fn evaluate_rejects_mismatched_predictions() {
    let dir = TempDir::new().unwrap();
    let files = synth(dir.path(), 1);
    let preds = dir.path().join("preds");
    fs::create_dir_all(&preds).unwrap();
    fs::write(preds.join("subject_01_predictions.csv"), "t,mean,sd\n0,1,1\n0.1,1,1\n").unwrap();
    let out = run(&["evaluate", "--data", s(&files[0]), "--predictions", s(&preds), "--out-dir", s(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["code"], "length_mismatch");
}
