//! The command-line verbs and their exit codes.

use std::path::Path;
use std::process::Command;

fn comm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_comm")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const TINY_DATA: &str = r#"{
  "spec": {
    "num_shapes": 3, "num_textures": 3, "num_colors": 3,
    "canvas_size": 16, "shape_extent": 12, "rotation_range": [-45.0, 45.0],
    "variants_per_combo": 1, "test_combinations": 6, "resolution_profile": "desk_64"
  },
  "pairs": { "n_train": 16, "n_test": 8, "allow_repeats_train": false, "allow_repeats_test": true }
}"#;

#[test]
fn plot_on_an_empty_directory_fails_with_io_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = comm(&["plot", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing to plot"));
}

#[test]
fn invalid_plan_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let plan = dir.path().join("plan.json");
    write(&plan, r#"{"name": "x", "seed": 0, "profile": "desk_64", "methods": [], "output_dir": "out"}"#);
    let out = comm(&["experiment", "--config", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let out = comm(&["experiment"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.json");
    write(&cfg, r#"{"pairs": {"n_train": 4}, "colour": 3}"#);
    let out = comm(&["generate-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn generate_train_and_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("data.json");
    write(&cfg, TINY_DATA);
    let data = dir.path().join("data");
    let out = comm(&["generate-data", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("exp1/manifest.csv").exists() && data.join("exp2/manifest.csv").exists());

    let mut train = comm::train::TrainConfig::trifeature(comm::train::Objective::Comm, comm::trifeature::ResolutionProfile::Desk64, 1);
    train.epochs = 1;
    train.batch_size = 8;
    train.model.embed_dim = 16;
    train.model.head.hidden = 16;
    train.model.head.output = 8;
    let train_cfg = dir.path().join("train.toml");
    write(&train_cfg, &toml::to_string(&train).unwrap());
    let run = dir.path().join("run");
    let out = comm(&[
        "train",
        "--config",
        train_cfg.to_str().unwrap(),
        "--data",
        data.join("exp1").to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("losses.jsonl").exists() && run.join("meta.json").exists());

    let probe_cfg = dir.path().join("probe.json");
    write(&probe_cfg, r#"{"seeds": [0], "probe": {"max_epochs": 20}}"#);
    let report = dir.path().join("report");
    let out = comm(&[
        "probe",
        "--config",
        probe_cfg.to_str().unwrap(),
        "--checkpoint",
        run.join("checkpoints/epoch_0001.ckpt").to_str().unwrap(),
        "--data",
        data.join("exp1").to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report.join("probe_report.json").exists() && report.join("probe_report.md").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("synergy_mapping"));
}
