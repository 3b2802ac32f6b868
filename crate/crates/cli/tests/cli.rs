use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_astrolsm"));
    c.env_remove("ASTROLSM_JOBS");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = r#"{
  "seed": 5,
  "lorenz": {"trajectories": 3, "windows_per_trajectory": 10, "transient_steps": 200},
  "reservoir": {"presentations": 5},
  "training": {"epochs": 20, "hidden": [16, 16]},
  "sweep": {"neuron_counts": [6], "seeds_per_cell": 1}
}"#;

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn assert_self_describing(dir: &Path, command: &str) {
    let stamp = read_json(&dir.join("stamp.json"));
    assert_eq!(stamp["command"], command);
    assert!(stamp["version"].is_string());
    let cfg = fs::read_to_string(dir.join("config.json")).unwrap();
    astrolsm_cli::PipelineConfig::parse(&cfg).unwrap();
}

#[test]
fn generate_lists_three_splits_and_is_deterministic() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), r#"{"lorenz": {"trajectories": 2, "windows_per_trajectory": 10}}"#);
    ok(t.path(), &["generate", "--config", "config.json", "--out", "a", "--seed", "7"]);
    ok(t.path(), &["generate", "--config", "config.json", "--out", "b", "--seed", "7"]);
    let m = read_json(&t.path().join("a/dataset.json"));
    let names: Vec<&str> = m["arrays"].as_array().unwrap().iter().map(|a| a["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["train", "val", "test"]);
    assert_eq!(m["metadata"]["split_sizes"], serde_json::json!([16, 2, 2]));
    assert_eq!(
        fs::read(t.path().join("a/dataset.bin")).unwrap(),
        fs::read(t.path().join("b/dataset.bin")).unwrap()
    );
    assert_self_describing(&t.path().join("a"), "generate");
    assert_eq!(read_json(&t.path().join("a/config.json"))["seed"], 7);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("blocker"), "x").unwrap();
    let out = run(t.path(), &["generate", "--out", "blocker/sub"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("blocker"));
}

#[test]
fn config_errors_exit_with_two() {
    let t = tempfile::tempdir().unwrap();
    write_config(t.path(), r#"{"training": {"epochz": 3}}"#);
    assert_eq!(run(t.path(), &["generate", "--config", "config.json"]).status.code(), Some(2));
    write_config(t.path(), r#"{"sweep": {"proportion_indices": [11]}}"#);
    assert_eq!(run(t.path(), &["sweep", "--config", "config.json"]).status.code(), Some(2));
    let bad_jobs = bin().current_dir(t.path()).env("ASTROLSM_JOBS", "many").arg("generate").output().unwrap();
    assert_eq!(bad_jobs.status.code(), Some(2));
    assert_eq!(run(t.path(), &["generate", "--config", "missing.json"]).status.code(), Some(3));
}

#[test]
fn train_on_two_windows_for_two_epochs() {
    let t = tempfile::tempdir().unwrap();
    write_config(
        t.path(),
        r#"{"lorenz": {"trajectories": 1, "windows_per_trajectory": 2, "transient_steps": 100},
            "network": {"n_neurons": 4, "n_astrocytes": 6},
            "reservoir": {"presentations": 3},
            "training": {"epochs": 2, "hidden": [8, 8]}}"#,
    );
    ok(t.path(), &["train", "--config", "config.json", "--out", "tr"]);
    let dir = t.path().join("tr");
    let epochs = fs::read_to_string(dir.join("loss_epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 1 + 2);
    assert!(dir.join("dataset.json").is_file());
    assert!(dir.join("readout.json").is_file());
    assert_self_describing(&dir, "train");
}

#[test]
fn one_cell_sweep_has_one_record() {
    let t = tempfile::tempdir().unwrap();
    write_config(
        t.path(),
        r#"{"lorenz": {"trajectories": 2, "windows_per_trajectory": 10, "transient_steps": 100},
            "reservoir": {"presentations": 3},
            "training": {"epochs": 20, "hidden": [8, 8]},
            "sweep": {"neuron_counts": [4], "proportion_indices": [5], "seeds_per_cell": 1}}"#,
    );
    ok(t.path(), &["sweep", "--config", "config.json", "--out", "runs", "--jobs", "2"]);
    let records = fs::read_to_string(t.path().join("runs/records.csv")).unwrap();
    assert_eq!(records.lines().count(), 2);
    assert!(records.lines().nth(1).unwrap().starts_with("4,8,2.0,5,"));
    assert_self_describing(&t.path().join("runs"), "sweep");
}

#[test]
fn analyze_with_too_few_records_leaves_no_output() {
    let t = tempfile::tempdir().unwrap();
    write_config(
        t.path(),
        r#"{"lorenz": {"trajectories": 2, "windows_per_trajectory": 10, "transient_steps": 100},
            "reservoir": {"presentations": 3},
            "training": {"epochs": 20, "hidden": [8, 8]},
            "sweep": {"neuron_counts": [4], "proportion_indices": [1, 2, 3], "seeds_per_cell": 1}}"#,
    );
    ok(t.path(), &["sweep", "--config", "config.json", "--out", "runs"]);
    let out = run(t.path(), &["analyze", "--records", "runs/records.csv", "--out", "an"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!t.path().join("an").exists());
    let missing = run(t.path(), &["analyze", "--records", "nowhere/records.csv"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere/records.csv"));
}

fn full_pipeline(dir: &Path) {
    write_config(dir, SMALL);
    ok(dir, &["sweep", "--config", "config.json", "--out", "runs"]);
    ok(dir, &["analyze", "--records", "runs/records.csv", "--out", "an"]);
    ok(dir, &["plot", "--analysis", "an", "--out", "fig"]);
}

#[test]
fn pipeline_produces_wellformed_figures_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    full_pipeline(a.path());
    full_pipeline(b.path());
    assert_eq!(
        fs::read(a.path().join("runs/records.csv")).unwrap(),
        fs::read(b.path().join("runs/records.csv")).unwrap()
    );
    for f in ["ols.csv", "lasso.csv", "kde_train_slope.csv", "summary.json"] {
        assert!(a.path().join("an").join(f).is_file(), "{f}");
    }
    assert_self_describing(&a.path().join("an"), "analyze");
    assert_self_describing(&a.path().join("fig"), "plot");
    let summary = read_json(&a.path().join("an/summary.json"));
    assert!(summary["kde"][0]["mode_ratio"].is_f64());

    let svgs = ["slope_vs_total.svg", "lasso_reconstruction.svg", "kde_slope_vs_ratio.svg"];
    for name in svgs {
        let text = fs::read_to_string(a.path().join("fig").join(name)).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
    }
    let kde = fs::read_to_string(a.path().join("fig/kde_slope_vs_ratio.svg")).unwrap();
    let doc = roxmltree::Document::parse(&kde).unwrap();
    let line = doc
        .descendants()
        .find(|n| n.attribute("id") == Some("reference-ratio"))
        .expect("reference line");
    assert_eq!(line.tag_name().name(), "line");
    assert_eq!(line.attribute("data-ratio"), Some("2"));
    assert_eq!(line.attribute("x1"), line.attribute("x2"));
}

#[test]
fn plot_refuses_empty_analysis() {
    let t = tempfile::tempdir().unwrap();
    let an = t.path().join("an");
    fs::create_dir(&an).unwrap();
    fs::write(
        an.join("points.csv"),
        "n_neurons,n_astrocytes,total,ratio,train_slope,val_slope,train_plateau,val_plateau\n",
    )
    .unwrap();
    fs::write(an.join("lasso_fit.csv"), "target,actual,fitted\n").unwrap();
    fs::write(an.join("kde_train_slope.csv"), "ratio,slope,density\n").unwrap();
    let out = run(t.path(), &["plot", "--analysis", "an", "--out", "fig"]);
    assert!(!out.status.success());
    assert!(!t.path().join("fig").exists());
    let missing = run(t.path(), &["plot", "--analysis", "nothing", "--out", "fig"]);
    assert_eq!(missing.status.code(), Some(3));
}
