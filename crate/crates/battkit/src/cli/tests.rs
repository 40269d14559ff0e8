use std::fs;
use std::path::Path;

use tempfile::tempdir;

use super::{run, EXIT_GATED, EXIT_OK, EXIT_USAGE};

fn sh(args: &[&str]) -> i32 {
    run(std::iter::once("battkit").chain(args.iter().copied()))
}

/// Small but complete scenario: two slow charges for calibration-style
/// flows, one fast charge the admission gate must refuse, and a short
/// healthy thermal trace.
const SCENARIO: &str = r#"
name = "cli-test"
seed = 77

[[charge]]
id = "slow-a"
ambient_c = 25.0
c_rate = 0.5
dt_s = 30.0
target_soh_pct = 100.0

[[charge]]
id = "slow-b"
ambient_c = 25.0
c_rate = 0.5
dt_s = 30.0
target_soh_pct = 90.0

[[charge]]
id = "fast"
ambient_c = 25.0
c_rate = 2.0
dt_s = 10.0

[[thermal]]
id = "pack"
sensors = 4
dt_s = 60.0
horizon_s = 14400.0
"#;

fn emit(dir: &Path) {
    let scenario = dir.join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    let out = dir.join("fleet");
    assert_eq!(
        sh(&["synth", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_OK
    );
}

#[test]
fn usage_errors_and_help_have_distinct_codes() {
    assert_eq!(sh(&["no-such-command"]), EXIT_USAGE);
    assert_eq!(sh(&["soc", "train"]), EXIT_USAGE); // missing required flags
    assert_eq!(sh(&["--help"]), EXIT_OK);
}

#[test]
fn synth_is_deterministic_per_seed() {
    let dir = tempdir().unwrap();
    let scenario = dir.path().join("scenario.toml");
    fs::write(&scenario, SCENARIO).unwrap();
    for out in ["a", "b"] {
        assert_eq!(
            sh(&[
                "synth",
                "--scenario",
                scenario.to_str().unwrap(),
                "--out",
                dir.path().join(out).to_str().unwrap(),
            ]),
            EXIT_OK
        );
    }
    let manifest_a = fs::read(dir.path().join("a/ground_truth.json")).unwrap();
    let manifest_b = fs::read(dir.path().join("b/ground_truth.json")).unwrap();
    assert_eq!(manifest_a, manifest_b);
    let charge_a = fs::read(dir.path().join("a/charges/slow-a.csv")).unwrap();
    let charge_b = fs::read(dir.path().join("b/charges/slow-a.csv")).unwrap();
    assert!(!charge_a.is_empty());
    assert_eq!(charge_a, charge_b);
}

#[test]
fn ingest_reports_segments_and_writes_cleaned_output() {
    let dir = tempdir().unwrap();
    emit(dir.path());
    let input = dir.path().join("fleet/charges/slow-a.csv");
    let cleaned = dir.path().join("cleaned.csv");
    let summary = dir.path().join("summary.json");
    assert_eq!(
        sh(&[
            "ingest",
            "--input",
            input.to_str().unwrap(),
            "--out",
            cleaned.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let text = fs::read_to_string(&summary).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["command"], "ingest");
    assert!(parsed["metrics"]["charge_segments"].as_array().map(|a| !a.is_empty()).unwrap());
    assert!(cleaned.exists());

    // The summary feeds the report renderer.
    assert_eq!(sh(&["report", "--input", summary.to_str().unwrap()]), EXIT_OK);
}

#[test]
fn soc_pipeline_trains_evaluates_and_predicts() {
    let dir = tempdir().unwrap();
    emit(dir.path());
    let fleet = dir.path().join("fleet");
    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        "row_stride_s = 60.0\n[train]\nhidden_layers = [4]\nmax_iterations = 3\npatience = 3\n",
    )
    .unwrap();
    let model = dir.path().join("model.json");
    let summary = dir.path().join("train_summary.json");
    assert_eq!(
        sh(&[
            "soc",
            "train",
            "--data",
            fleet.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "9",
            "--out",
            model.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(parsed["seed"], 9, "flag must override the config seed");

    assert_eq!(
        sh(&[
            "soc",
            "eval",
            "--data",
            fleet.to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--row-stride-s",
            "60",
        ]),
        EXIT_OK
    );

    let trace = dir.path().join("trace.tsv");
    assert_eq!(
        sh(&[
            "soc",
            "predict",
            "--input",
            dir.path().join("fleet/charges/slow-a.csv").to_str().unwrap(),
            "--model",
            model.to_str().unwrap(),
            "--out",
            trace.to_str().unwrap(),
        ]),
        EXIT_OK
    );
    let first = fs::read_to_string(&trace).unwrap();
    let cols = first.lines().next().unwrap().split('\t').count();
    assert_eq!(cols, 2, "trace is two-column text");
}

#[test]
fn soh_gate_rejects_fast_charge_with_gated_exit() {
    let dir = tempdir().unwrap();
    emit(dir.path());
    let fast = dir.path().join("fleet/charges/fast.csv");
    let summary = dir.path().join("gate.json");
    assert_eq!(
        sh(&[
            "soh",
            "gate",
            "--input",
            fast.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ]),
        EXIT_GATED
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(parsed["metrics"]["gate"]["accepted"], false);
    assert!(!parsed["metrics"]["gate"]["reasons"].as_array().unwrap().is_empty());

    let slow = dir.path().join("fleet/charges/slow-a.csv");
    assert_eq!(sh(&["soh", "gate", "--input", slow.to_str().unwrap()]), EXIT_OK);
}

#[test]
fn soh_curves_exports_two_column_files() {
    let dir = tempdir().unwrap();
    emit(dir.path());
    let input = dir.path().join("fleet/charges/slow-a.csv");
    let prefix = dir.path().join("curves");
    assert_eq!(
        sh(&["soh", "curves", "--input", input.to_str().unwrap(), "--out", prefix.to_str().unwrap()]),
        EXIT_OK
    );
    for ext in ["ic.tsv", "dv.tsv"] {
        let text = fs::read_to_string(dir.path().join(format!("curves.{ext}"))).unwrap();
        assert!(text.lines().count() > 10);
        assert!(text.lines().all(|l| l.split('\t').count() == 2));
    }
}

#[test]
fn thermal_replay_is_byte_identical_and_watch_resumes() {
    let dir = tempdir().unwrap();
    emit(dir.path());
    let input = dir.path().join("fleet/thermal/pack.csv");
    let (v1, v2) = (dir.path().join("v1.jsonl"), dir.path().join("v2.jsonl"));
    for v in [&v1, &v2] {
        assert_eq!(
            sh(&["thermal", "replay", "--input", input.to_str().unwrap(), "--out", v.to_str().unwrap()]),
            EXIT_OK
        );
    }
    let b1 = fs::read(&v1).unwrap();
    assert!(!b1.is_empty());
    assert_eq!(b1, fs::read(&v2).unwrap());
    let first_line = String::from_utf8(b1).unwrap().lines().next().unwrap().to_string();
    let verdict: serde_json::Value = serde_json::from_str(&first_line).unwrap();
    for key in ["origin_s", "criterion", "offending_sensors", "sensors"] {
        assert!(verdict.get(key).is_some(), "verdict line carries {key}");
    }

    // Watch twice with a shared state file: the second run resumes.
    let state = dir.path().join("state.json");
    let summary = dir.path().join("watch.json");
    for _ in 0..2 {
        assert_eq!(
            sh(&[
                "thermal",
                "watch",
                "--input",
                input.to_str().unwrap(),
                "--state",
                state.to_str().unwrap(),
                "--out",
                dir.path().join("w.jsonl").to_str().unwrap(),
                "--summary",
                summary.to_str().unwrap(),
            ]),
            EXIT_OK
        );
    }
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    let per_run = parsed["metrics"]["batches"].as_u64().unwrap();
    let total = parsed["metrics"]["batches_seen_total"].as_u64().unwrap();
    assert_eq!(total, 2 * per_run, "state carried batch count across runs");
}
