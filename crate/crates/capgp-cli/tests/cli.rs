//! End-to-end runs of the binary: flag validation, exit codes, output files,
//! and byte-level determinism. Fits here use tiny data and few restarts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_capgp")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(binary())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("capgp-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Self(dir)
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

/// Two short correlated trajectories; cheap to fit.
fn write_tiny_csv(dir: &Path) -> PathBuf {
    let mut text = String::from("cell_id,cycle,capacity_ah\n");
    for k in 1..=18u32 {
        let x = f64::from(k);
        text.push_str(&format!("X,{k},{:.6}\n", 2.0 - 0.012 * x - 0.0005 * x * x));
        text.push_str(&format!("Y,{k},{:.6}\n", 1.9 - 0.015 * x - 0.0004 * x * x));
    }
    let path = dir.join("cells.csv");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_data_flag_is_usage_error() {
    let tmp = TempDir::new("usage");
    let out = run_in(tmp.path(), &["fit"]);
    assert_eq!(exit_code(&out), 1);
    let msg = stderr(&out);
    assert!(msg.contains("--data"), "stderr: {msg}");
}

#[test]
fn unknown_flag_is_rejected() {
    let tmp = TempDir::new("unknown-flag");
    let out = run_in(tmp.path(), &["fit", "--data", "x.csv", "--bogus"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn duplicate_cycle_is_data_error_with_line() {
    let tmp = TempDir::new("dup");
    let csv = tmp.path().join("bad.csv");
    std::fs::write(
        &csv,
        "cell_id,cycle,capacity_ah\nX,1,1.0\nX,2,1.0\nX,2,0.9\nX,4,0.9\n",
    )
    .unwrap();
    let out = run_in(
        tmp.path(),
        &["fit", "--data", "bad.csv", "--restarts", "1"],
    );
    assert_eq!(exit_code(&out), 2);
    let msg = stderr(&out);
    assert!(msg.contains("line 4"), "stderr: {msg}");
}

#[test]
fn fit_then_forecast_roundtrip() {
    let tmp = TempDir::new("fit-forecast");
    write_tiny_csv(tmp.path());
    let out = run_in(
        tmp.path(),
        &[
            "fit", "--data", "cells.csv", "--latent", "1", "--restarts", "2", "--seed", "7",
            "--stride", "1", "--out", "model.toml",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let model_text = std::fs::read_to_string(tmp.path().join("model.toml")).unwrap();
    assert!(model_text.starts_with("# capgp "), "header missing");
    assert!(model_text.contains("invocation:"));

    let out = run_in(
        tmp.path(),
        &[
            "forecast", "--model", "model.toml", "--cell", "X", "--cycles", "19..30", "--out",
            "fc.csv",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let fc = std::fs::read_to_string(tmp.path().join("fc.csv")).unwrap();
    let rows: Vec<&str> = fc
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("cycle"))
        .collect();
    assert_eq!(rows.len(), 12);
    // Truth column is blank for a plain forecast.
    assert!(rows.iter().all(|r| r.ends_with(',')));

    // Unknown cell is a data error.
    let out = run_in(
        tmp.path(),
        &["forecast", "--model", "model.toml", "--cell", "Z", "--cycles", "19..20"],
    );
    assert_eq!(exit_code(&out), 2);

    // Reversed range is a usage error.
    let out = run_in(
        tmp.path(),
        &["forecast", "--model", "model.toml", "--cell", "X", "--cycles", "30..19"],
    );
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn forecast_interpolates_training_cycles() {
    let tmp = TempDir::new("interp");
    write_tiny_csv(tmp.path());
    let out = run_in(
        tmp.path(),
        &[
            "fit", "--data", "cells.csv", "--latent", "1", "--restarts", "2", "--seed", "3",
            "--stride", "1", "--out", "model.toml",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let out = run_in(
        tmp.path(),
        &["forecast", "--model", "model.toml", "--cell", "X", "--cycles", "5..5", "--out", "one.csv"],
    );
    assert_eq!(exit_code(&out), 0);
    let text = std::fs::read_to_string(tmp.path().join("one.csv")).unwrap();
    let row = text.lines().last().unwrap();
    let mean: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    let truth = 2.0 - 0.012 * 5.0 - 0.0005 * 25.0;
    assert!(
        (mean - truth).abs() < 0.02,
        "training-cycle forecast {mean} should be near {truth}"
    );
}

#[test]
fn bench_unknown_scenario_is_usage_error() {
    let tmp = TempDir::new("bad-scenario");
    let csv = write_tiny_csv(tmp.path());
    let out = run_in(
        tmp.path(),
        &["bench", "--data", csv.to_str().unwrap(), "--scenario", "z"],
    );
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn bench_custom_scenario_runs_and_is_deterministic() {
    let tmp = TempDir::new("bench");
    write_tiny_csv(tmp.path());
    std::fs::write(
        tmp.path().join("scenario.toml"),
        concat!(
            "name = \"tiny\"\n",
            "target_cell = \"X\"\n",
            "downsample_stride = 1\n",
            "downsample_phase = 0\n",
            "[train_cycles_per_cell]\n",
            "X = 12\n",
            "Y = 18\n",
        ),
    )
    .unwrap();
    let args = [
        "bench", "--data", "cells.csv", "--scenario", "scenario.toml", "--latent", "1",
        "--restarts", "2", "--seed", "5", "--out", "out",
    ];
    let out = run_in(tmp.path(), &args);
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = std::fs::read_to_string(tmp.path().join("out/report.txt")).unwrap();
    assert!(report.starts_with("# capgp "));
    assert!(report.contains("MCGP"));
    assert!(report.contains("IGP_linear"));
    assert!(tmp.path().join("out/forecast_mcgp.csv").exists());
    assert!(tmp.path().join("out/forecast_igp_linear.csv").exists());
    assert!(tmp.path().join("out/model_mcgp.toml").exists());

    // Identical invocation, byte-identical outputs.
    let forecast_first = std::fs::read(tmp.path().join("out/forecast_mcgp.csv")).unwrap();
    let model_first = std::fs::read(tmp.path().join("out/model_mcgp.toml")).unwrap();
    let out = run_in(tmp.path(), &args);
    assert_eq!(exit_code(&out), 0);
    assert_eq!(
        std::fs::read(tmp.path().join("out/report.txt")).unwrap(),
        report.as_bytes()
    );
    assert_eq!(
        std::fs::read(tmp.path().join("out/forecast_mcgp.csv")).unwrap(),
        forecast_first
    );
    assert_eq!(
        std::fs::read(tmp.path().join("out/model_mcgp.toml")).unwrap(),
        model_first
    );
}

#[test]
fn bench_single_model_row() {
    let tmp = TempDir::new("single");
    write_tiny_csv(tmp.path());
    std::fs::write(
        tmp.path().join("scenario.toml"),
        concat!(
            "name = \"tiny\"\n",
            "target_cell = \"X\"\n",
            "downsample_stride = 1\n",
            "downsample_phase = 0\n",
            "[train_cycles_per_cell]\n",
            "X = 12\n",
            "Y = 18\n",
        ),
    )
    .unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "bench", "--data", "cells.csv", "--scenario", "scenario.toml", "--models",
            "igp_linear", "--restarts", "2", "--out", "out",
        ],
    );
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr(&out));
    let report = std::fs::read_to_string(tmp.path().join("out/report.txt")).unwrap();
    assert!(report.contains("IGP_linear"));
    assert!(!report.contains("\nMCGP"));
    assert!(!tmp.path().join("out/model_mcgp.toml").exists());
}
