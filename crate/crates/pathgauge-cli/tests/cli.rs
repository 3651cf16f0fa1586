//! End-to-end tests of the `pathgauge` binary: exit codes, reproducibility,
//! seed precedence, and the fetch/estimate/simulate/calibrate/report flows.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use pathgauge::model::{Direction, SimConfig};
use pathgauge::simulator::generate_pair_dataset;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pathgauge"));
    cmd.env_remove("PATHGAUGE_SEED");
    cmd
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Canonical record file with `pairs` small/large probe pairs and fixed
/// delays (delta_d = large_delay - small_delay on every pair).
fn write_fixed_record_file(path: &Path, pairs: u64, small_delay: f64, large_delay: f64) {
    let mut body = String::new();
    for k in 0..pairs {
        let t = 1000.0 + 0.06 * k as f64;
        body.push_str(&format!("{k} 100 {t:.6} {small_delay}\n"));
        body.push_str(&format!("{k} 1100 {:.6} {large_delay}\n", t + 0.03));
    }
    fs::write(path, body).expect("fixture written");
}

/// Record file generated under the simulator's delay model.
fn write_generated_record_file(path: &Path, direction: &Direction, lambda: f64, pairs: u64) {
    let config = SimConfig {
        lambda_rate: lambda,
        d_min: 0.01,
        true_delta_d: 2.92e-4,
        ..SimConfig::default()
    };
    let (smalls, larges) =
        generate_pair_dataset(&config, pairs, direction, 1000.0, 0.03).expect("valid config");
    let mut records = smalls;
    records.extend(larges);
    pathgauge::ingest::write_records(path, direction, &records).expect("fixture written");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = bin().args(["simulate", "--bogus"]).output().unwrap();
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = bin().arg(flag).output().unwrap();
        assert_eq!(exit_code(&out), 0, "{flag}");
    }
    let out = bin().args(["simulate", "--help"]).output().unwrap();
    assert_eq!(exit_code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("ipv4-table3"), "preset names listed in help");
}

#[test]
fn invalid_config_reports_every_issue_at_once() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--trials", "0", "--lambda=-1", "--trim", "0.9", "--out", "x"],
    );
    assert_eq!(exit_code(&out), 1);
    let err = stderr_text(&out);
    assert!(err.contains("trials"), "missing trials issue: {err}");
    assert!(err.contains("lambda_rate"), "missing lambda issue: {err}");
    assert!(err.contains("trim_fraction"), "missing trim issue: {err}");
}

#[test]
fn same_seed_runs_are_byte_identical_across_dirs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["simulate", "--trials", "5000", "--n-grid", "5,20", "--seed", "7"];
    for (out_stem, jobs) in [("a/eta", "1"), ("b/eta", "1"), ("c/eta", "3")] {
        let out = run_in(dir.path(), &[&args[..], &["--jobs", jobs, "--out", out_stem]].concat());
        assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    }
    let a_csv = fs::read(dir.path().join("a/eta.csv")).unwrap();
    let b_csv = fs::read(dir.path().join("b/eta.csv")).unwrap();
    let c_csv = fs::read(dir.path().join("c/eta.csv")).unwrap();
    assert_eq!(a_csv, b_csv, "same seed, same bytes");
    assert_eq!(a_csv, c_csv, "thread count must not change results");
    let a_json = fs::read(dir.path().join("a/eta.json")).unwrap();
    let c_json = fs::read(dir.path().join("c/eta.json")).unwrap();
    assert_eq!(a_json, c_json);
}

#[test]
fn seed_comes_from_env_unless_the_flag_overrides_it() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["simulate", "--trials", "400", "--n-grid", "5"];
    let run = |out_stem: &str, seed_flag: Option<&str>, env: Option<&str>| {
        let mut cmd = bin();
        cmd.current_dir(dir.path()).args(base).args(["--out", out_stem]);
        if let Some(seed) = seed_flag {
            cmd.args(["--seed", seed]);
        }
        if let Some(seed) = env {
            cmd.env("PATHGAUGE_SEED", seed);
        }
        let out = cmd.output().unwrap();
        assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
        fs::read(dir.path().join(format!("{out_stem}.csv"))).unwrap()
    };
    let default = run("default", None, None);
    let env7 = run("env7", None, Some("7"));
    let flag42_env7 = run("flag42", Some("42"), Some("7"));
    assert_ne!(default, env7, "env seed must take effect");
    assert_eq!(default, flag42_env7, "--seed must override the env var");
}

fn write_reference_eta_csv(path: &Path) {
    fs::write(
        path,
        "n,eta_percent\n5,82.6\n10,61.1\n20,44.2\n30,35.5\n50,24.4\n100,13.9\n200,9.4\n",
    )
    .unwrap();
}

#[test]
fn calibrate_finds_n_100_for_ten_percent_after_correction() {
    let dir = tempfile::tempdir().unwrap();
    write_reference_eta_csv(&dir.path().join("eta.csv"));
    let out = run_in(
        dir.path(),
        &["calibrate", "--table", "eta.csv", "--k-combined", "1.53", "--target", "10"],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["required_n"], 100);
    assert_eq!(v["interpolated"], false);
    assert!((v["combined_factor"].as_f64().unwrap() - 1.53).abs() < 1e-12);
}

#[test]
fn calibrate_unreachable_target_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_reference_eta_csv(&dir.path().join("eta.csv"));
    let out = run_in(dir.path(), &["calibrate", "--table", "eta.csv", "--target", "5"]);
    assert_eq!(exit_code(&out), 3);
    let v = stdout_json(&out);
    assert_eq!(v["required_n"], serde_json::Value::Null);
}

#[test]
fn calibrate_sloppy_target_is_met_by_the_smallest_n() {
    let dir = tempfile::tempdir().unwrap();
    write_reference_eta_csv(&dir.path().join("eta.csv"));
    let out = run_in(dir.path(), &["calibrate", "--table", "eta.csv", "--target", "200"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    assert_eq!(stdout_json(&out)["required_n"], 5);
}

#[test]
fn calibrate_corrected_output_feeds_back_in() {
    let dir = tempfile::tempdir().unwrap();
    write_reference_eta_csv(&dir.path().join("eta.csv"));
    let out = run_in(
        dir.path(),
        &[
            "calibrate", "--table", "eta.csv", "--k-combined", "1.53", "--target", "10",
            "--out", "corrected",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    // The corrected table, fed back with no further correction, answers
    // the same query the same way.
    let out = run_in(dir.path(), &["calibrate", "--table", "corrected.csv", "--target", "10"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    assert_eq!(stdout_json(&out)["required_n"], 100);
    assert!(dir.path().join("corrected.manifest.json").exists());
}

#[test]
fn calibrate_missing_table_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["calibrate", "--table", "absent.csv", "--target", "10"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn calibrate_rejects_sd_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sd.csv"), "n,sd_mbps\n5,49.3\n").unwrap();
    let out = run_in(dir.path(), &["calibrate", "--table", "sd.csv", "--target", "10"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("expected"), "{}", stderr_text(&out));
}

#[test]
fn fetch_two_file_sources_writes_both_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_fixed_record_file(&dir.path().join("fwd.txt"), 20, 0.01, 0.010292);
    write_fixed_record_file(&dir.path().join("rev.txt"), 20, 0.008, 0.008288);
    let out = run_in(
        dir.path(),
        &[
            "fetch",
            "--source", "tt01->tt146=file:fwd.txt",
            "--source", "tt146->tt01=file:rev.txt",
            "--out-dir", "collected",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    assert!(dir.path().join("collected/tt01-to-tt146.records").exists());
    assert!(dir.path().join("collected/tt146-to-tt01.records").exists());
    assert!(dir.path().join("collected/fetch.manifest.json").exists());
    let v = stdout_json(&out);
    assert_eq!(v["sources"].as_array().unwrap().len(), 2);
    assert_eq!(v["sources"][0]["report"]["accepted"], 40);
    assert_eq!(v["sources"][0]["error"], serde_json::Value::Null);
}

#[test]
fn fetch_refused_tcp_source_is_partial_failure_naming_the_source() {
    let dir = tempfile::tempdir().unwrap();
    write_fixed_record_file(&dir.path().join("fwd.txt"), 5, 0.01, 0.010292);
    // Bind then drop to get a port with no listener.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let tcp_spec = format!("tt146->tt01=tcp:127.0.0.1:{port}");
    let out = run_in(
        dir.path(),
        &[
            "fetch",
            "--source", "tt01->tt146=file:fwd.txt",
            "--source", &tcp_spec,
            "--out-dir", ".",
            "--idle-timeout-secs", "0.5",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(
        err.contains(&format!("tcp://127.0.0.1:{port}")),
        "diagnostic must name the failing source: {err}"
    );
    // The healthy file source still produced its records file.
    assert!(dir.path().join("tt01-to-tt146.records").exists());
}

#[test]
fn fetch_rejects_duplicate_directions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["fetch", "--source", "a->b=file:x", "--source", "a->b=file:y"],
    );
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn estimate_missing_records_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["estimate", "--records", "a->b=absent.records"]);
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("absent.records"));
}

#[test]
fn estimate_insufficient_data_suggests_the_feasible_grid() {
    let dir = tempfile::tempdir().unwrap();
    write_fixed_record_file(&dir.path().join("short.records"), 12, 0.01, 0.010292);
    let out = run_in(dir.path(), &["estimate", "--records", "a->b=short.records"]);
    assert_eq!(exit_code(&out), 2);
    let err = stderr_text(&out);
    assert!(err.contains("insufficient data"), "{err}");
    assert!(err.contains("--n-grid 5,10"), "feasible grid suggested: {err}");
}

#[test]
fn estimate_golden_mean_from_constant_delays() {
    let dir = tempfile::tempdir().unwrap();
    write_fixed_record_file(&dir.path().join("fwd.records"), 20, 0.01, 0.010292);
    let out = run_in(
        dir.path(),
        &["estimate", "--records", "tt01->tt146=fwd.records", "--n-grid", "5,10,20"],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["directions"][0]["mean_bandwidth_mbps"], "27.4");
    assert_eq!(v["directions"][0]["pairs"], 20);
    // Constant delays: zero SD, so the smallest tabulated n suffices.
    assert_eq!(v["directions"][0]["required_n_2sigma"], 5);
    assert!(dir.path().join("tt01-to-tt146-sd.csv").exists());
    assert!(dir.path().join("tt01-to-tt146-estimates.csv").exists());
    assert!(dir.path().join("estimate.manifest.json").exists());
}

#[test]
fn estimate_flags_asymmetric_directions() {
    let dir = tempfile::tempdir().unwrap();
    let fwd = Direction::new("tt01", "tt146");
    let rev = fwd.reversed();
    // The reverse direction has 6x less delay noise, so its SD-vs-n table
    // sits about 6x lower and the default 1.5x flag must fire. Both rates
    // keep the per-window denominator noise well under its mean, where SD
    // scales inversely with the rate.
    write_generated_record_file(&dir.path().join("fwd.records"), &fwd, 20_000.0, 600);
    write_generated_record_file(&dir.path().join("rev.records"), &rev, 120_000.0, 600);
    let out = run_in(
        dir.path(),
        &[
            "estimate",
            "--records", "tt01->tt146=fwd.records",
            "--records", "tt146->tt01=rev.records",
            "--n-grid", "5,10,20,50",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let v = stdout_json(&out);
    assert_eq!(v["asymmetry"]["flagged"], true);
    let ratio = v["asymmetry"]["geometric_mean_ratio"].as_f64().unwrap();
    assert!((3.0..12.0).contains(&ratio), "geometric mean ratio {ratio}");
    assert_eq!(v["directions"].as_array().unwrap().len(), 2);
}

#[test]
fn simulate_sweep_covers_the_grid_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "simulate", "--trials", "300", "--n-grid", "5",
            "--sweep-lambda", "1000,2000", "--sweep-delta-d", "0.0004,0.0008",
            "--out", "sw",
        ],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let body: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("sw-sweep.json")).unwrap()).unwrap();
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), 4);
    assert_eq!(points[0]["lambda_rate"], 1000.0);
    assert_eq!(points[1]["true_delta_d"], 0.0008);
    assert_eq!(points[3]["lambda_rate"], 2000.0);
    assert!(points.iter().all(|p| p["rows"].is_array()));
    assert!(dir.path().join("sw-sweep.manifest.json").exists());
}

#[test]
fn report_summarizes_a_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &["simulate", "--trials", "300", "--n-grid", "5,10", "--out", "run/eta"],
    );
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let out = run_in(dir.path(), &["report", "--dir", "run"]);
    assert_eq!(exit_code(&out), 0, "{}", stderr_text(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run/eta.manifest.json")).unwrap())
            .unwrap();
    let id = manifest["id"].as_str().unwrap();
    assert!(text.contains(id), "report names the manifest: {text}");
    assert!(text.contains("eta.csv (2 data rows)"), "{text}");
    assert!(text.contains("eta.json"), "{text}");
    assert!(text.contains("orphans: (none)"), "{text}");
}

#[test]
fn report_on_a_directory_without_manifests_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["report", "--dir", "."]);
    assert_eq!(exit_code(&out), 2);
}
