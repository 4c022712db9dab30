use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stresswatch")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// simulate + featurize into `root/sim` and `root/feat`.
fn prepare(root: &Path, users: &str, days: &str) {
    let sim = root.join("sim");
    let feat = root.join("feat");
    let o = run(&["--seed", "4", "--out", p(&sim), "simulate", "--users", users, "--days", days]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["--out", p(&feat), "featurize", "--input", p(&sim)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn simulate_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("s");
    let o = run(&["--seed", "2", "--out", p(&out), "simulate", "--users", "2", "--days", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["bursts.jsonl", "context.jsonl", "ema.csv", "triggers.jsonl", "latent.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 2);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 5);
    let ema = fs::read_to_string(out.join("ema.csv")).unwrap();
    assert!(ema.starts_with("timestamp_ms,user_id,stress_level"));
    let first = fs::read_to_string(out.join("bursts.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    for key in ["user_id", "channel", "start_time_ms", "rate_hz", "samples"] {
        assert!(rec.get(key).is_some(), "{key}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["simulate", "--bogus"])), 2);
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["train-eval", "--input", "x.csv", "--model", "svm"])), 2);
    assert_eq!(code(&run(&["train-eval", "--input", "x.csv", "--features", "eeg"])), 2);
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&run(&["--out", p(&out), "train-eval", "--input", "x.csv", "--folds", "1"])), 2);
    assert_eq!(code(&run(&["--out", p(&out), "train-eval", "--input", "x.csv", "--model", "knn", "--k", "0"])), 2);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn data_errors_exit_3() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("nope.json");
    let o = run(&["--config", p(&missing), "--out", p(&out), "simulate"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("nope.json"));

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"simulation": {"n_users": 0}}"#).unwrap();
    assert_eq!(code(&run(&["--config", p(&bad_cfg), "--out", p(&out), "simulate"])), 3);

    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::write(
        data.join("bursts.jsonl"),
        "{\"user_id\":\"a\",\"channel\":\"ppg\",\"start_time_ms\":0,\"rate_hz\":20.0,\"samples\":[0.0]}\n{oops\n",
    )
    .unwrap();
    let o = run(&["--out", p(&out), "featurize", "--input", p(&data)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("bursts.jsonl:2"), "{}", stderr(&o));

    let o = run(&["--out", p(&out), "train-eval", "--input", p(&dir.path().join("absent.csv"))]);
    assert_eq!(code(&o), 3);
}

#[test]
fn empty_input_gives_header_only_matrix() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("empty");
    fs::create_dir_all(&data).unwrap();
    let out = dir.path().join("f");
    let o = run(&["--out", p(&out), "featurize", "--input", p(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("features.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    assert!(csv.contains("bpm") && csv.contains("location"));
}

#[test]
fn full_workflow() {
    let dir = TempDir::new().unwrap();
    prepare(dir.path(), "4", "2");
    let features = dir.path().join("feat/features.csv");
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("feat/features.json")).unwrap()).unwrap();
    assert!(sidecar.is_object());

    // more folds than users
    let out = dir.path().join("te");
    let o = run(&["--out", p(&out), "train-eval", "--input", p(&features), "--folds", "5"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = run(&["--out", p(&out), "train-eval", "--input", p(&features), "--folds", "2", "--features", "ppg", "--depth", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let model: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert!(model["feature_names"].as_array().unwrap().len() <= 12);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["folds"].as_array().map(Vec::len), Some(2), "{report}");
    assert!(out.join("report.csv").is_file());

    let ex = dir.path().join("ex");
    let o = run(&["--out", p(&ex), "explain", "--input", p(&features), "--model-file", p(&out.join("model.json")), "--max-rows", "20"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ranking: serde_json::Value = serde_json::from_str(&fs::read_to_string(ex.join("ranking.json")).unwrap()).unwrap();
    assert!(!ranking.as_array().unwrap().is_empty());
    assert!(fs::read_to_string(ex.join("shap.csv")).unwrap().lines().count() > 1);

    // 24 columns is beyond exact explanation
    let wide = dir.path().join("wide");
    let o = run(&["--out", p(&wide), "train-eval", "--input", p(&features), "--folds", "2", "--depth", "3", "--select-top", "24"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["--out", p(&ex), "explain", "--input", p(&features), "--model-file", p(&wide.join("model.json"))]);
    let wide_model: serde_json::Value = serde_json::from_str(&fs::read_to_string(wide.join("model.json")).unwrap()).unwrap();
    assert!(wide_model["feature_names"].as_array().unwrap().len() > 16);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let pers = dir.path().join("pers");
    let o = run(&["--out", p(&pers), "personalize", "--input", p(&features), "--user", "u01", "--user", "u02", "--depth", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let reports: serde_json::Value = serde_json::from_str(&fs::read_to_string(pers.join("personalization.json")).unwrap()).unwrap();
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    for r in reports {
        for key in ["user", "f1_before", "f1_after", "n_test"] {
            assert!(r.get(key).is_some(), "{key} in {r}");
        }
    }

    let o = run(&["--out", p(&pers), "personalize", "--input", p(&features), "--user", "u99"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
