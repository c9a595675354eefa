use std::path::Path;
use std::process::Command;

const SMALL_CONFIG: &str = r#"
seed = 3

[mesh]
rows = 5
cols = 4

[data]
n_traj = 3

[targets]
n_targets = 1

[model]
landmarks = 30

[run]
total_steps = 15
settle_steps = 5

[eval]
min_passing = 1
"#;

fn clothfold(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_clothfold"))
        .args(["--config", dir.join("config.toml").to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .args(args)
        .env("CLOTHFOLD_WORKERS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = clothfold(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn every_verb_runs_on_a_small_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), SMALL_CONFIG).unwrap();

    assert!(ok(dir, &["gen-data"]).contains("triples from 3 trajectories"));
    assert!(dir.join("dataset.csv").exists() && dir.join("train_000.csv").exists());
    assert!(ok(dir, &["fit"]).contains("fitted 30 landmarks"));
    assert!(ok(dir, &["targets"]).contains("1 targets"));
    assert!(ok(dir, &["mpc", "--target", "0"]).contains("target 0: mesh error"));
    assert!(dir.join("fold_0.csv").exists() && dir.join("fold_0.json").exists());

    let replay = ok(dir, &["replay", dir.join("fold_0.csv").to_str().unwrap()]);
    assert!(replay.contains("max coordinate deviation 0e0 m"), "{replay}");
    let replay = ok(dir, &["replay", "--settle-steps", "0", dir.join("train_000.csv").to_str().unwrap()]);
    assert!(replay.contains("max coordinate deviation 0e0 m"), "{replay}");

    let eval = clothfold(dir, &["eval"]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let expected = if summary["passed"].as_bool().unwrap() { 0 } else { 2 };
    assert_eq!(eval.status.code(), Some(expected));
    assert_eq!(summary["folds"].as_array().unwrap().len(), 1);

    let sweep = ok(dir, &["sweep", "--parameter", "T", "--values", "5", "--seeds", "0", "--data", dir.join("dataset.csv").to_str().unwrap()]);
    assert!(sweep.contains("Horizon = 5"), "{sweep}");
    let table = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
    assert!(table.starts_with("parameter,value,seed,target,mesh_error_m,fold_error,completed,error"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), "[mesh]\nrows = 1\n").unwrap();
    let out = clothfold(dir, &["show-config"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    std::fs::write(dir.join("config.toml"), "").unwrap();
    let out = clothfold(dir, &["fit"]);
    assert_eq!(out.status.code(), Some(1), "fit without a dataset must fail");
}

#[test]
fn show_config_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("config.toml"), SMALL_CONFIG).unwrap();
    let printed = ok(dir, &["show-config"]);
    std::fs::write(dir.join("config.toml"), &printed).unwrap();
    assert_eq!(ok(dir, &["show-config"]), printed);
    assert!(printed.contains("width_m") && printed.contains("dither_m"));
}
