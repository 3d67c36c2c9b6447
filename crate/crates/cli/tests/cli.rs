//! Black-box tests of the pipeline binary: exit codes, stage independence
//! and the sweep artifact layout.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_windconflict")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn small_synthetic_config() -> String {
    r#"
[scenario]
output_dir = "run"
seed = 991
threshold_nm = 5.0

[expansion]
modes = 3
quadrature_order = 2

[trajectory]
time_step = 20.0
max_flight_time = 86400.0

[synthetic]
members = 40
grid_lat0 = 40.0
grid_lon0 = 0.0
grid_step = 1.0
grid_nlat = 5
grid_nlon = 5
correlation_length = 6.0
cross_correlation = 0.3
sigma_u = 3.0
sigma_v = 3.0
mean_u = 8.0
mean_v = -3.0

[[aircraft]]
id = "A"
origin = [41.0, 1.0]
destination = [43.5, 3.5]
airspeed = 230.0
altitude = 11000.0

[[aircraft]]
id = "B"
origin = [43.5, 1.0]
destination = [41.0, 3.5]
airspeed = 242.0
altitude = 11000.0
"#
    .to_string()
}

#[test]
fn invalid_config_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_synthetic_config().replace(
        "modes = 3",
        "modes = 3\nexplained_variance = 0.9",
    );
    write_config(dir.path(), &config);
    let out = run_in(dir.path(), &["detect", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("expansion.modes"), "{stderr}");
}

#[test]
fn missing_config_file_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["detect", "--config", "nope.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_ensemble_file_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"
[scenario]
ensembles = ["absent.csv"]
output_dir = "run"
threshold_nm = 5.0

[expansion]
modes = 2
quadrature_order = 2

[[aircraft]]
id = "A"
origin = [41.0, 1.0]
destination = [43.0, 3.0]
airspeed = 230.0
altitude = 11000.0

[[aircraft]]
id = "B"
origin = [43.0, 1.0]
destination = [41.0, 3.0]
airspeed = 230.0
altitude = 11000.0
"#;
    write_config(dir.path(), config);
    let out = run_in(dir.path(), &["ingest", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn oversized_truncation_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_synthetic_config().replace("modes = 3", "modes = 500");
    write_config(dir.path(), &config);
    let out = run_in(dir.path(), &["decompose", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("exceeds"), "{stderr}");
}

#[test]
fn report_before_detect_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &small_synthetic_config());
    let out = run_in(dir.path(), &["report", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("detect"), "{stderr}");
}

#[test]
fn detect_runs_missing_stages_and_is_stage_independent() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &small_synthetic_config());

    // detect on an empty directory builds the whole chain
    let out = run_in(dir.path(), &["detect", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    for artifact in ["ensemble.csv", "expansion.bin", "surrogate_A_B.bin", "detect.json"] {
        assert!(run.join(artifact).exists(), "{artifact} missing");
    }
    let first = std::fs::read(run.join("detect.json")).unwrap();

    // re-running only detect from the persisted artifacts reproduces the
    // exact same output
    std::fs::remove_file(run.join("detect.json")).unwrap();
    let out = run_in(dir.path(), &["detect", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let second = std::fs::read(run.join("detect.json")).unwrap();
    assert_eq!(first, second);

    // decompose alone is also re-runnable and reproduces its archive
    let before = std::fs::read(run.join("expansion.bin")).unwrap();
    let out = run_in(dir.path(), &["decompose", "--config", "scenario.toml"]);
    assert_eq!(out.status.code(), Some(0));
    let after = std::fs::read(run.join("expansion.bin")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn surrogate_dump_prints_coefficient_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &small_synthetic_config());
    let out = run_in(dir.path(), &["surrogate", "--config", "scenario.toml", "--dump"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("(0,0,0)"), "{stdout}");
    assert!(stdout.contains("indices x"), "{stdout}");
}

#[test]
fn sweep_writes_one_run_per_mode_count_and_a_table() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &small_synthetic_config());
    let out = run_in(
        dir.path(),
        &["sweep", "--config", "scenario.toml", "--sweep-M", "2..3"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("run");
    assert!(run.join("sweep.csv").exists());
    for m in 2..=3 {
        let sub = run.join(format!("M_{m}"));
        assert!(sub.join("detect.json").exists(), "M_{m} detect.json missing");
        assert!(sub.join("report/summary.txt").exists(), "M_{m} summary missing");
    }
    let table = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert!(table.starts_with("M,explained_cumulative,pair,verdict,probability,seconds\n"));
    assert_eq!(table.lines().count(), 3, "{table}");

    let invalid = run_in(
        dir.path(),
        &["sweep", "--config", "scenario.toml", "--sweep-M", "0..2"],
    );
    assert_eq!(invalid.status.code(), Some(2));
}

#[test]
fn output_dir_override_is_honored() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), &small_synthetic_config());
    let out = Command::new(bin())
        .args(["ingest", "--config", "scenario.toml"])
        .current_dir(dir.path())
        .env("WINDCONFLICT_OUT", "elsewhere")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("elsewhere/ensemble.csv").exists());
    assert!(!dir.path().join("run").exists());
}
