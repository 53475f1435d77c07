use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use icrl_cli::config::{parse_config, ConfigError};
use icrl_cli::{load_config, read_config};
use serde_json::{json, Value};
use tempfile::TempDir;

const ROOMS: &str = "\
#########
#S..#...#
#...#...#
#.......#
#####.###
#...L...#
#.L....G#
#########
";

fn rooms(n_train: u64, n_max: u64, seed: u64) -> Value {
    json!({
        "map": ROOMS,
        "slip": 0.1,
        "delta": 0.1,
        "init": {"cell": [1, 1], "orientation": "E"},
        "target_exit": [[7, 6]],
        "subsystems": [
            {"id": 0, "entry_cells": [[1, 1]], "exit_cells": [[4, 3]], "horizon": 20},
            {"id": 1, "entry_cells": [[4, 3]], "exit_cells": [[5, 4]], "horizon": 20},
            {"id": 2, "entry_cells": [[5, 4]], "exit_cells": [[7, 6]], "horizon": 20}
        ],
        "training": {"n_train": n_train, "n_max": n_max},
        "estimation": {"n_rollouts": 200},
        "evaluation": {"episodes": 200},
        "seed": seed
    })
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn icrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icrl")).args(args).output().unwrap()
}

fn run_into(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "-q"];
    args.extend_from_slice(extra);
    icrl(&args)
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

fn shipped() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/labyrinth.json")
}

#[test]
fn shipped_labyrinth_config_loads() {
    let config = load_config(&shipped()).unwrap();
    assert_eq!(config.specs.len(), 12);
    assert_eq!(config.delta, 0.05);
    assert_eq!(config.slip, 0.1);
    assert_eq!(config.n_train, 50_000);
    assert_eq!(config.n_max, 500_000);
    assert_eq!(config.estimator.rollouts, 300);
    assert_eq!(config.specs[4].horizon, 18);
}

#[test]
fn missing_delta_is_a_validation_error() {
    let mut value = rooms(1_000, 10_000, 0);
    value.as_object_mut().unwrap().remove("delta");
    let err = parse_config(&value.to_string(), Path::new(".")).unwrap_err();
    assert!(matches!(err, ConfigError::Validation { .. }), "{err}");
    assert_eq!(err.field(), Some("delta"));
}

#[test]
fn unknown_keys_are_rejected() {
    let mut value = rooms(1_000, 10_000, 0);
    value["detla"] = json!(0.1);
    let err = parse_config(&value.to_string(), Path::new(".")).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)), "{err}");
}

#[test]
fn partial_overlap_is_not_composable() {
    let dir = TempDir::new().unwrap();
    let mut value = rooms(1_000, 10_000, 0);
    value["subsystems"][0]["exit_cells"] = json!([[4, 3], [5, 3]]);
    value["subsystems"][1]["entry_cells"] = json!([[4, 3], [3, 3]]);
    let path = write(dir.path(), "bad.json", &value);
    match load_config(&path) {
        Err(ConfigError::NotComposable(report)) => {
            assert_eq!(report.overlapping_pairs(), vec![(0, 1)]);
        }
        other => panic!("expected NotComposable, got {other:?}"),
    }
    // still readable for reporting
    assert!(read_config(&path).is_ok());
    let out = icrl(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout) + String::from_utf8_lossy(&out.stderr);
    assert!(text.contains("subsystem 0") && text.contains("subsystem 1"), "{text}");
    let out = run_into(&path, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_and_decompose_on_the_labyrinth() {
    let path = shipped();
    let out = icrl(&["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let out = icrl(&["decompose", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["abstract_states"], 12);
    assert_eq!(report["paths"].as_array().unwrap().len(), 2);
    assert_eq!(report["support_path"], json!([0, 4, 5, 9]));
    let level = 0.95f64.powf(0.25);
    for c in [0, 4, 5, 9] {
        assert!((report["p"][c].as_f64().unwrap() - level).abs() < 1e-9);
    }
}

#[test]
fn missing_config_file_exits_one() {
    let out = icrl(&["run", "/nonexistent/config.json", "-q"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn zero_budget_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let path = write(dir.path(), "zero.json", &rooms(1_000, 0, 0));
    let out_dir = dir.path().join("out");
    let out = run_into(&path, &out_dir, &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out_dir);
    assert_eq!(s["terminated"], "infeasible");
    assert_eq!(s["total_steps"], 0);
    let stdout: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stdout, s);
}

#[test]
fn run_artifacts_are_consistent_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let n_train = 5_000u64;
    let path = write(dir.path(), "rooms.json", &rooms(n_train, 60_000, 3));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run_into(&path, out_dir, &[]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let log = fs::read(a.join("run_log.csv")).unwrap();
    assert_eq!(log, fs::read(b.join("run_log.csv")).unwrap());
    for id in 0..3 {
        let name = format!("final_policies/subsystem_{id}.qtable");
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
    }
    assert!(a.join("final_policies/meta_policy.json").is_file());

    let mut reader = csv::Reader::from_reader(log.as_slice());
    let k = 3;
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), 2 * k + 6);
    assert_eq!(&header[0], "iteration");
    assert_eq!(&header[3], "sigma_hat_0");
    assert_eq!(&header[3 + k], "p_0");
    assert_eq!(&header[2 * k + 5], "feasible");
    let rows: Vec<_> = reader.records().map(Result::unwrap).collect();
    assert!(!rows.is_empty());
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 2 * k + 6);
        assert_eq!(row[0].parse::<usize>().unwrap(), i + 1);
    }

    let s = summary(&a);
    assert_eq!(s["terminated"], "success");
    let iterations = s["iterations"].as_u64().unwrap();
    assert_eq!(iterations as usize, rows.len());
    assert_eq!(s["total_steps"].as_u64().unwrap(), n_train * iterations);
    let per_id: u64 = s["steps"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(per_id, n_train * iterations);

    // a different seed gives a different run
    let c = dir.path().join("c");
    run_into(&path, &c, &["--seed", "4"]);
    assert_ne!(log, fs::read(c.join("run_log.csv")).unwrap());
    assert_eq!(summary(&c)["seed"], 4);
}
