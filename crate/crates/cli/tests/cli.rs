use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratecate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// First `rows` data rows of the bundled training file.
fn small_input(dir: &Path, rows: usize) -> PathBuf {
    let text = fs::read_to_string(data("train.csv")).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).take(rows + 1).collect();
    let path = dir.join("small.csv");
    fs::write(&path, kept.join("\n") + "\n").unwrap();
    path
}

#[test]
fn fit_writes_three_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path(), 200);
    let out = dir.path().join("fit");
    let stdout = ok(&["fit", "--input", s(&input), "--learner", "glm", "--no-symmetric", "--out", s(&out)]);
    assert!(stdout.contains("The estimated weights in constructed CATE scores"));
    for f in ["fit.json", "scores.csv", "weights.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let fit = json(out.join("fit.json"));
    assert_eq!(fit["config"]["symmetric"], Value::Bool(false));
    assert_eq!(fit["n"], 200);
    assert!(fit["provenance"]["config_sha256"].is_string());
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.lines().any(|l| l == "row,contrast,tworeg,naive"));
    assert_eq!(scores.lines().filter(|l| !l.starts_with('#')).count(), 201);
}

#[test]
fn same_seed_gives_identical_scores() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path(), 300);
    let out = dir.path().join("run");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        ok(&["fit", "--input", s(&input), "--learner", "glm", "--seed", "42", "--out", s(&out)]);
        outputs.push(fs::read(out.join("scores.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

fn constant_scores(dir: &Path, n: usize) -> PathBuf {
    let mut text = String::from("row,flat\n");
    for i in 0..n {
        text.push_str(&format!("{i},0.25\n"));
    }
    let path = dir.join("flat.csv");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn constant_score_validates_flat() {
    let dir = tempfile::tempdir().unwrap();
    let scores = constant_scores(dir.path(), 2000);
    let out = dir.path().join("val");
    ok(&[
        "validate", "--input", s(&data("validation.csv")), "--scores", s(&scores), "--score-column", "flat",
        "--out", s(&out),
    ]);
    let curve = json(out.join("curve.json"));
    let ads: Vec<f64> = curve["curve"]["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["estimate"]["ad"].as_f64().unwrap())
        .collect();
    assert_eq!(ads.len(), 10);
    assert!(ads.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12), "{ads:?}");
    let split = json(out.join("split.json"));
    assert!(split["high"]["ad"].is_number() && split["low"]["ad"].is_number());
    assert!(out.join("curve.csv").exists() && out.join("curve.dat").exists());
}

#[test]
fn oracle_column_is_monotone_for_true_ranking() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    ok(&[
        "fit", "--input", s(&data("train.csv")), "--learner", "glm", "--method", "contrast", "--folds", "3",
        "--partition-replicates", "1", "--predict", s(&data("validation.csv")), "--out", s(&out),
    ]);
    let val = dir.path().join("val");
    ok(&[
        "validate", "--input", s(&data("validation.csv")), "--scores", s(&out.join("predictions.csv")),
        "--score-column", "contrast", "--oracle", "setting3_mild", "--out", s(&val),
    ]);
    let text = fs::read_to_string(val.join("curve.csv")).unwrap();
    let mut rows = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "oracle_ad").expect("oracle column");
    let oracle: Vec<f64> = rows.map(|l| l.split(',').nth(col).unwrap().parse().unwrap()).collect();
    assert!(oracle.windows(2).all(|w| w[0] >= w[1] - 1e-9), "{oracle:?}");
}

#[test]
fn missing_score_column_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let scores = constant_scores(dir.path(), 2000);
    let out = run(&[
        "validate", "--input", s(&data("validation.csv")), "--scores", s(&scores), "--score-column", "absent",
        "--out", s(&dir.path().join("v")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "input");
}

#[test]
fn survival_without_tau_is_rejected() {
    let out = run(&["fit", "--input", s(&data("surv_train.csv")), "--survival"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_writes_study_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let stdout = ok(&[
        "simulate", "--setting", "setting2_poisson", "--n", "1000", "--replicates", "4", "--learner", "glm",
        "--method", "contrast,naive", "--oracle-draws", "20000", "--out", s(&out),
    ]);
    assert!(stdout.contains("contrast"));
    for f in ["coefficients.csv", "correlations.csv", "report.json", "provenance.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let coef = fs::read_to_string(out.join("coefficients.csv")).unwrap();
    assert!(coef.starts_with("# ratecate"));
}

#[test]
fn simulate_export_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("surv.csv");
    ok(&["simulate", "--setting", "surv2", "--n", "300", "--export", s(&file), "--out", s(&dir.path().join("o"))]);
    let text = fs::read_to_string(&file).unwrap();
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.contains("time") && header.contains("status"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 301);
}

#[test]
fn unknown_setting_lists_valid_names() {
    let out = run(&["simulate", "--setting", "setting9"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("setting1_contrast") && msg.contains("surv2"), "{msg}");
}

#[test]
fn toy_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let stdout = ok(&["toy", "--n", "20000", "--out", s(&out)]);
    assert!(stdout.contains("naive"));
    let report = json(out.join("toy.json"));
    assert!(report["provenance"].is_object());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_input(dir.path(), 300);
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("fit");
    fs::write(
        &cfg,
        serde_json::json!({"input": input, "learner": "glm", "folds": 4, "seed": 3, "out": out}).to_string(),
    )
    .unwrap();
    ok(&["fit", "--config", s(&cfg), "--seed", "9"]);
    let fit = json(out.join("fit.json"));
    assert_eq!(fit["config"]["seed"], 9);
    assert_eq!(fit["config"]["folds"], 4);

    fs::write(&cfg, r#"{"unknown_key": 1}"#).unwrap();
    assert_eq!(run(&["fit", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("check");
    ok(&["check", "--populations", "50", "--directions", "10", "--n", "20000", "--out", s(&out)]);
    assert!(out.join("check.json").exists());
}

#[test]
fn survival_fit_and_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit");
    ok(&[
        "fit", "--input", s(&data("surv_train.csv")), "--survival", "--tau", "0.75", "--method", "contrast,naive",
        "--folds", "3", "--partition-replicates", "1", "--predict", s(&data("surv_validation.csv")), "--out",
        s(&out),
    ]);
    let val = dir.path().join("val");
    ok(&[
        "validate", "--input", s(&data("surv_validation.csv")), "--survival", "--tau", "0.75", "--scores",
        s(&out.join("predictions.csv")), "--score-column", "contrast", "--q-grid", "0.25,0.5,1", "--out", s(&val),
    ]);
    let curve = json(val.join("curve.json"));
    assert_eq!(curve["metric"], "rmtl_ratio");
}
