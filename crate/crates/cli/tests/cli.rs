use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tstar");
const FAST: [&str; 6] = [
    "--set",
    "epochs=2",
    "--set",
    "max_windows_per_epoch=1500",
    "--set",
    "batch_size=64",
];

fn tstar(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .env_remove("TSTAR_SEED")
        .env_remove("TSTAR_JOBS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = tstar(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_fast<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--config", "tstar.conf"];
    v.extend_from_slice(&FAST);
    v.extend_from_slice(args);
    v
}

/// Synthetic dataset plus config in a fresh directory.
fn dataset(stations: usize, days: usize, test_days: usize) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.txt");
    std::fs::write(&spec, format!("stations = {stations}\ndays = {days}\nseed = 5\n")).unwrap();
    let dir = tmp.path().join("data");
    ok(
        tmp.path(),
        &["synth", "--spec", spec.to_str().unwrap(), "--out", "data", "--test-days", &test_days.to_string()],
    );
    (tmp, dir)
}

fn ingested(stations: usize, days: usize, test_days: usize) -> (tempfile::TempDir, PathBuf) {
    let (tmp, dir) = dataset(stations, days, test_days);
    ok(&dir, &["--config", "tstar.conf", "ingest"]);
    (tmp, dir)
}

#[test]
fn print_config_lists_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(tmp.path(), &["--print-config"]);
    for line in ["v1 = 24", "v2 = 24", "horizon = 1", "samples = 100", "alpha = 0.1", "proximity_m = 300", "epochs = 100", "batch_size = 256"] {
        assert!(text.lines().any(|l| l == line), "missing `{line}`");
    }
    let out = Command::new(BIN)
        .current_dir(tmp.path())
        .env("TSTAR_SEED", "99")
        .env("TSTAR_JOBS", "1")
        .args(["--print-config"])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l == "seed = 99"));
    assert!(text.lines().any(|l| l == "jobs = 1"));
    let text = ok(tmp.path(), &["--set", "epochs=7", "--print-config"]);
    assert!(text.lines().any(|l| l == "epochs = 7"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(tstar(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(tstar(tmp.path(), &["--no-such-flag"]).status.code(), Some(1));
    assert_eq!(tstar(tmp.path(), &["--set", "bogus=1", "--print-config"]).status.code(), Some(1));
    assert_eq!(tstar(tmp.path(), &["--set", "epochs=abc", "ingest"]).status.code(), Some(1));
    // default config points at files that do not exist
    let out = tstar(tmp.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("trips.csv"));
}

#[test]
fn ingest_is_idempotent_and_reports() {
    let (_tmp, dir) = ingested(3, 14, 7);
    let first = std::fs::read(dir.join("out/bundle.json")).unwrap();
    let report = std::fs::read_to_string(dir.join("out/ingest_report.txt")).unwrap();
    assert!(report.contains("trips: rows="));
    ok(&dir, &["--config", "tstar.conf", "ingest"]);
    assert_eq!(first, std::fs::read(dir.join("out/bundle.json")).unwrap());
}

#[test]
fn missing_input_names_the_path() {
    let (_tmp, dir) = dataset(2, 7, 2);
    std::fs::remove_file(dir.join("weather.csv")).unwrap();
    let out = tstar(&dir, &["--config", "tstar.conf", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weather.csv"));
}

#[test]
fn stage2_requires_stage1_archive() {
    let (_tmp, dir) = ingested(3, 14, 7);
    let out = tstar(&dir, &with_fast(&["train", "--stage", "2"]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage-1 archive"), "{err}");
    assert_eq!(tstar(&dir, &["--config", "tstar.conf", "forecast"]).status.code(), Some(2));
}

#[test]
fn train_forecast_evaluate() {
    let (_tmp, dir) = ingested(3, 14, 7);
    ok(&dir, &with_fast(&["train", "--stage", "1"]));
    let out = dir.join("out");
    for f in ["stage1_pickup.json", "stage1_dropoff.json", "stage1_archive.csv", "signals.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let ck = std::fs::read(out.join("stage1_pickup.json")).unwrap();
    ok(&dir, &with_fast(&["train", "--stage", "both"]));
    assert_eq!(ck, std::fs::read(out.join("stage1_pickup.json")).unwrap(), "fixed seed, same checkpoint");
    assert!(out.join("stage2_pickup.json").is_file());

    ok(&dir, &["--config", "tstar.conf", "forecast"]);
    let text = std::fs::read_to_string(out.join("forecast_pickup.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("station_id,quarter_index,mu,r,median,p05,p95"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3 * 7 * 96);
    assert!(rows[0].starts_with("S001,672,"));

    let stdout = ok(&dir, &["--config", "tstar.conf", "evaluate"]);
    assert!(stdout.contains("mcrps="));
    for f in ["report.csv", "report_summary.csv", "report_temporal.csv", "baselines_summary.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    std::fs::write(dir.join("bad.csv"), "station,when\nS001,3\n").unwrap();
    let bad = tstar(&dir, &["--config", "tstar.conf", "evaluate", "--forecast", "bad.csv"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("bad.csv"));
}

#[test]
fn zero_shot_forecast() {
    let (_tmp, dir) = ingested(4, 14, 7);
    let held = ["--set", "holdout=S004"];
    let args = |extra: &[&'static str]| {
        let mut v = with_fast(&held);
        v.extend_from_slice(extra);
        v
    };
    ok(&dir, &args(&["train"]));
    let unseen = tstar(&dir, &args(&["forecast", "--stations", "S001,S004"]));
    assert_eq!(unseen.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unseen.stderr).contains("S004"));

    let stations = std::fs::read_to_string(dir.join("stations.csv")).unwrap();
    let mut lines = stations.lines();
    let only: String = [lines.next().unwrap(), lines.find(|l| l.starts_with("S004")).unwrap()].join("\n");
    std::fs::write(dir.join("new.csv"), only + "\n").unwrap();
    ok(&dir, &args(&["forecast", "--zero-shot", "new.csv", "-o", "zs.csv"]));
    let text = std::fs::read_to_string(dir.join("zs.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("S004,")).count(), 7 * 96);
    assert_eq!(text.lines().filter(|l| l.starts_with("S001,")).count(), 7 * 96);
}

#[test]
fn rolling_backtest_writes_fold_reports() {
    let (_tmp, dir) = ingested(2, 28, 7);
    let args = with_fast(&["--set", "cv_rolling=1,1,1,3", "evaluate", "--cv", "rolling"]);
    ok(&dir, &args);
    let out = dir.join("out");
    let folds = std::fs::read_to_string(out.join("cv_rolling_folds.csv")).unwrap();
    assert_eq!(folds.lines().count(), 4);
    assert!(folds.contains("w1-w1"));
    let first = std::fs::read(out.join("cv_rolling_fold3_report_summary.csv")).unwrap();
    ok(&dir, &args);
    assert_eq!(first, std::fs::read(out.join("cv_rolling_fold3_report_summary.csv")).unwrap());
}
