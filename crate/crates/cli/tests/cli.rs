use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use affect_core::bench::{load_reports_json, save_reports_json};
use affect_core::dataset::{read_features_csv, write_ibi_csv};
use affect_core::eval::EvalReport;
use affect_core::synth::{synth_ibi, StateProfile};
use affect_core::EmotionLabel;

fn affect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_affect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = affect(args);
    assert!(
        out.status.success(),
        "affect {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two synthetic subjects extracted to a WRIST_ALL features CSV.
fn features(dir: &Path) -> PathBuf {
    let raw = dir.join("raw");
    let csv = dir.join("features.csv");
    ok(&["synth", "--subjects", "2", "--seed", "5", "--out", s(&raw)]);
    ok(&["extract", "--input", s(&raw), "--out", s(&csv)]);
    csv
}

#[test]
fn five_minute_stream_gives_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw");
    let csv = dir.path().join("f.csv");
    ok(&["synth", "--subjects", "1", "--segments", "amusement:300", "--out", s(&raw)]);
    ok(&["extract", "--input", s(&raw), "--out", s(&csv)]);
    let table = read_features_csv(&csv).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows.iter().all(|r| r.label == EmotionLabel::Amusement));

    let combined = dir.path().join("c.csv");
    ok(&["extract", "--input", s(&raw), "--scenario", "COMBINED", "--out", s(&combined)]);
    assert_eq!(read_features_csv(&combined).unwrap().rows[0].features.len(), 10);
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let csv = features(dir.path());
    let a = dir.path().join("a.pafm");
    let b = dir.path().join("b.pafm");
    let c = dir.path().join("c.pafm");
    for out in [&a, &b] {
        ok(&["train", "--features", s(&csv), "--model", "et", "--trees", "20", "--seed", "3", "--out", s(out)]);
    }
    ok(&["train", "--features", s(&csv), "--model", "et", "--trees", "20", "--seed", "4", "--out", s(&c)]);
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    assert_ne!(bytes, std::fs::read(&c).unwrap());
}

#[test]
fn separable_model_scores_perfectly_and_reports_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = features(dir.path());
    let model = dir.path().join("rf.pafm");
    let report = dir.path().join("eval.json");
    ok(&["train", "--features", s(&csv), "--model", "rf", "--trees", "25", "--test-frac", "0", "--out", s(&model)]);
    let table = ok(&["eval", "--model-file", s(&model), "--features", s(&csv), "--test-frac", "0", "--out", s(&report)]);
    assert!(table.contains("macro_f1  1.0000"));

    let parsed = EvalReport::load_json(&report).unwrap();
    assert_eq!(parsed.macro_f1, 1.0);
    assert_eq!(parsed.to_json(), std::fs::read_to_string(&report).unwrap());
}

#[test]
fn compile_bench_and_infer() {
    let dir = tempfile::tempdir().unwrap();
    let csv = features(dir.path());
    let model = dir.path().join("gbt.pafm");
    let compiled = dir.path().join("gbt.compiled.pafm");
    ok(&["train", "--features", s(&csv), "--model", "gbt", "--trees", "10", "--out", s(&model)]);
    ok(&["compile", "--model-file", s(&model)]);
    assert!(compiled.is_file());

    let json = dir.path().join("bench.json");
    let out = ok(&[
        "bench",
        "--model-file",
        s(&model),
        s(&compiled),
        "--features",
        s(&csv),
        "--reps",
        "200",
        "--warmup",
        "10",
        "--runs",
        "2",
        "--out",
        s(&json),
    ]);
    assert!(out.contains("source") && out.contains("compiled"));
    let reports = load_reports_json(&json).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r.macro_f1.is_some() && r.reps == 200));
    let again = dir.path().join("again.json");
    save_reports_json(&again, &reports).unwrap();
    assert_eq!(load_reports_json(&again).unwrap(), reports);
    let rows = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);

    let window = synth_ibi(&StateProfile::canonical(EmotionLabel::Stress, 9), 120.0).unwrap();
    let ibi = dir.path().join("window.csv");
    write_ibi_csv(&ibi, &window.ibi).unwrap();
    let pred = dir.path().join("pred.json");
    let stdout = ok(&["infer", "--model-file", s(&compiled), "--ibi", s(&ibi), "--out", s(&pred)]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["label"], "Stress");
    assert_eq!(v, serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&pred).unwrap()).unwrap());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let csv = features(dir.path());
    let config = dir.path().join("run.toml");
    let from_file = dir.path().join("file.pafm");
    std::fs::write(&config, format!("model = \"logistic\"\nseed = 11\nout = {:?}\n", s(&from_file))).unwrap();
    ok(&["--config", s(&config), "train", "--features", s(&csv)]);
    assert!(from_file.is_file());

    let flagged = dir.path().join("flag.pafm");
    ok(&["train", "--config", s(&config), "--features", s(&csv), "--model", "svm", "--out", s(&flagged)]);
    let model = affect_core::AnyModel::load(&flagged).unwrap();
    assert_eq!(model.kind(), affect_core::ModelKind::LinearSvm);
}

#[test]
fn failures_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = affect(&["train", "--features", s(&missing), "--model", "rf"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.csv"), "{err}");

    let out = affect(&["train", "--features", s(&missing), "--model", "perceptron"]);
    assert!(!out.status.success());

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "subject,window_start_s,sdnn,label\nS1,0,abc,1\n").unwrap();
    let out = affect(&["train", "--features", s(&bad), "--model", "rf"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") || err.contains(":2"), "{err}");
}
