use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn t2g(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_t2g"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// Short simulation and S1 matrix in a fresh directory.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let sim = t2g(p, &["simulate", "--scenario", "cross_basic", "--horizon", "14400", "--seed", "1", "-o", "tg.csv"]);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    let feat = t2g(p, &["featurize", "--telegrams", "tg.csv", "--catalog", "tg.catalog.json", "--signal", "S1", "-o", "m.csv"]);
    assert_eq!(code(&feat), 0, "{}", String::from_utf8_lossy(&feat.stderr));
    dir
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&t2g(dir.path(), &["--help"])), 0);
    assert_eq!(code(&t2g(dir.path(), &["--version"])), 0);
    let help = t2g(dir.path(), &["train", "--help"]);
    assert!(String::from_utf8_lossy(&help.stdout).contains("--model"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(&t2g(p, &["frobnicate"])), 1);
    assert_eq!(code(&t2g(p, &["simulate", "--scenario", "zurich_like", "-o", "x.csv"])), 1);
    assert_eq!(code(&t2g(p, &["train", "--matrix", "m.csv", "--model", "rf", "-o", "x.json"])), 1);
    assert_eq!(code(&t2g(p, &["train", "--matrix", "m.csv", "--model", "lstm", "-o", "x.json"])), 1);
    assert_eq!(code(&t2g(p, &["tune", "--matrix", "m.csv", "--model", "rf", "-o", "t.csv"])), 1);
    assert_eq!(code(&t2g(p, &["rfe", "--matrix", "m.csv", "--keep", "3", "-o", "r.csv"])), 1);
    assert_eq!(code(&t2g(p, &["train", "--matrix", "m.csv", "--model", "svm", "-o", "x.json"])), 1);
    assert_eq!(code(&t2g(p, &["simulate", "--scenario", "nowhere", "--seed", "1", "-o", "x.csv"])), 1);
    // nothing was written
    assert_eq!(fs::read_dir(p).unwrap().count(), 0);
}

#[test]
fn data_errors_exit_two() {
    let dir = prepared();
    let p = dir.path();
    assert_eq!(code(&t2g(p, &["train", "--matrix", "missing.csv", "--model", "lr", "-o", "x.json"])), 2);
    fs::write(p.join("bad.csv"), "timestamp,device_id,state\n5,S1,7\n").unwrap();
    let out = t2g(p, &["featurize", "--telegrams", "bad.csv", "--catalog", "tg.catalog.json", "--signal", "S1", "-o", "b.csv"]);
    assert_eq!(code(&out), 2);
    let out = t2g(p, &["featurize", "--telegrams", "tg.csv", "--catalog", "tg.catalog.json", "--signal", "S42", "-o", "b.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn schema_mismatch_is_a_data_error() {
    let dir = prepared();
    let p = dir.path();
    assert_eq!(code(&t2g(p, &["rfe", "--matrix", "m.csv", "--keep", "5", "--ranker", "ols", "-o", "r.csv"])), 0);
    assert_eq!(code(&t2g(p, &["train", "--matrix", "r.csv", "--model", "lr", "-o", "lr.json"])), 0);
    let out = t2g(p, &["evaluate", "--matrix", "m.csv", "--model", "lr.json", "-o", "rep.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
    assert_eq!(code(&t2g(p, &["importance", "--model", "lr.json", "-o", "imp.csv"])), 2);
}

#[test]
fn manifest_detects_modified_inputs() {
    let dir = prepared();
    let p = dir.path();
    let m = ["--manifest", "run.json"];
    let train = [&m[..], &["train", "--matrix", "m.csv", "--model", "naive", "-o", "n.json"]].concat();
    assert_eq!(code(&t2g(p, &train)), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("run.json")).unwrap()).unwrap();
    let step = &manifest["steps"][0];
    assert_eq!(step["command"], "train");
    assert!(step["inputs"]["m.csv"].is_string());
    assert!(step["outputs"]["n.json"].is_string());

    let mut text = fs::read_to_string(p.join("m.csv")).unwrap();
    text.push('\n');
    fs::write(p.join("m.csv"), text).unwrap();
    let out = t2g(p, &train);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));
}

#[test]
fn ladder_on_a_short_run() {
    let dir = prepared();
    let p = dir.path();
    let ok = |args: &[&str]| {
        let out = t2g(p, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["ingest", "--telegrams", "tg.csv", "--catalog", "tg.catalog.json", "-o", "clean.csv", "--cycles", "cycles.csv"]);
    // the simulator's own cycle table matches the ingested one
    assert_eq!(
        fs::read_to_string(p.join("cycles.csv")).unwrap().lines().count(),
        fs::read_to_string(p.join("tg.truth.csv")).unwrap().lines().count()
    );
    ok(&["tune", "--matrix", "m.csv", "--model", "lstm", "--trials", "2", "--folds", "2", "--seed", "3", "--epochs", "2", "-o", "trials.csv", "--best", "best.json"]);
    ok(&["train", "--matrix", "m.csv", "--model", "lstm", "--params", "best.json", "--units", "4", "--epochs", "3", "--seed", "4", "-o", "lstm.json"]);
    ok(&["train", "--matrix", "m.csv", "--model", "rf", "--trees", "20", "--seed", "5", "-o", "rf.json"]);
    ok(&["evaluate", "--matrix", "m.csv", "--model", "lstm.json", "-o", "a.csv"]);
    ok(&["evaluate", "--matrix", "m.csv", "--model", "rf.json", "-o", "b.csv", "--predictions", "plot.csv"]);
    ok(&["importance", "--model", "rf.json", "-o", "imp.csv"]);
    ok(&["report", "a.csv", "b.csv", "-o", "all.csv"]);

    let trials = fs::read_to_string(p.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 3);
    let report = fs::read_to_string(p.join("all.csv")).unwrap();
    let models: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(models, ["naive", "lstm", "naive", "rf"]);
    let plot = fs::read_to_string(p.join("plot.csv")).unwrap();
    let n_test: usize = report.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(plot.lines().count(), n_test + 1);
    let imp = fs::read_to_string(p.join("imp.csv")).unwrap();
    let values: Vec<f64> = imp.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
    assert!((values.iter().sum::<f64>() - 1.0).abs() < 1e-4);
}
