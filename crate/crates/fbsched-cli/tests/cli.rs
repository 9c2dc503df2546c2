//! End-to-end checks of the binary: the workflow chains, reruns are
//! byte-identical, and every failure path exits nonzero with a one-line
//! diagnostic instead of leaving half-written artifacts around.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fbsched-cli"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary launches")
}

fn stdout_of(out: &Output) -> String {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn failure_of(out: &Output) -> (i32, String) {
    let code = out.status.code().expect("no signal");
    assert_ne!(code, 0, "expected a failure exit");
    (code, String::from_utf8_lossy(&out.stderr).into_owned())
}

fn shipped_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")
}

/// A two-loop scenario small enough that the whole workflow runs in
/// seconds.
fn small_scenario(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
            seed = 11
            out_dir = "out"

            [simulation]
            mode = "ofs"
            duration_s = 0.8
            micro_step_s = 0.0005
            log_step_s = 0.01
            u_setpoint = 0.75
            fbs_period_s = 0.2
            f_min_hz = 5.0
            f_max_hz = 200.0

            [[loops]]
            omega0 = 10.0
            f0_hz = 60.0
            gamma = 43.0
            weight = 1.0

            [[loops]]
            omega0 = 13.3
            f0_hz = 70.0
            gamma = 67.0
            weight = 1.0

            [disturbance]
            period_s = 0.01

            [[trace]]
            start_s = 0.0
            exec_s = [0.002, 0.002, 0.0005]

            [[trace]]
            start_s = 0.4
            exec_s = [0.003, 0.003, 0.001]

            [dataset]
            exec_grids_s = [[0.002, 0.003], [0.002, 0.003]]
            u_budgets = [0.5, 0.6]

            [training]
            m_hidden = 3
            max_epochs = 40
            holdout_frac = 0.25
        "#,
    )
    .unwrap();
    path
}

#[test]
fn gen_data_solves_the_shipped_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario = shipped_scenario();
    let stdout = stdout_of(&run(&[
        "gen-data",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert!(stdout.contains("2016 rows"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(out.join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2017, "header plus one row per instance");
    assert!(csv.starts_with("c_1,c_2,c_3,u_budget,h_1,h_2,h_3\n"));
}

#[test]
fn the_whole_workflow_chains_on_one_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    let out = dir.path().join("out");

    stdout_of(&run(&["gen-data", "--scenario", s]));
    let trained = stdout_of(&run(&["train", "--scenario", s]));
    assert!(trained.contains("trained m=3"), "stdout: {trained}");
    assert!(out.join("model.toml").exists());
    assert!(out.join("training_report.csv").exists());

    for mode in ["ols", "ofs", "nfs"] {
        stdout_of(&run(&["simulate", "--scenario", s, "--mode", mode]));
        assert!(out.join(format!("log_{mode}.csv")).exists());
    }

    stdout_of(&run(&["bench-overhead", "--scenario", s, "--runs", "9"]));
    let runs = std::fs::read_to_string(out.join("overhead_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 19, "header plus 9 samples per path");
    assert!(out.join("overhead_summary.csv").exists());

    let report = stdout_of(&run(&["report", "--scenario", s]));
    for needle in ["final accumulated cost", "ols", "ofs", "nfs", "median ratio exact/neural"] {
        assert!(report.contains(needle), "report lacks '{needle}':\n{report}");
    }

    let sweep = stdout_of(&run(&["sweep-hidden", "--scenario", s, "--hidden", "1,2"]));
    assert!(sweep.contains("m_hidden"), "stdout: {sweep}");
    let table = std::fs::read_to_string(out.join("hidden_sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3, "header plus one row per width");
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        stdout_of(&run(&[
            "simulate",
            "--scenario",
            s,
            "--mode",
            "ofs",
            "--out",
            out.to_str().unwrap(),
        ]));
    }
    let bytes_a = std::fs::read(a.join("log_ofs.csv")).unwrap();
    let bytes_b = std::fs::read(b.join("log_ofs.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    assert!(!bytes_a.is_empty());
}

#[test]
fn a_different_seed_changes_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    stdout_of(&run(&["simulate", "--scenario", s, "--out", a.to_str().unwrap()]));
    stdout_of(&run(&[
        "simulate",
        "--scenario",
        s,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "12",
    ]));
    assert_ne!(
        std::fs::read(a.join("log_ofs.csv")).unwrap(),
        std::fs::read(b.join("log_ofs.csv")).unwrap()
    );
}

#[test]
fn neural_mode_without_a_model_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let (code, stderr) = failure_of(&run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "nfs",
    ]));
    assert_eq!(code, 2);
    let expected = dir.path().join("out").join("model.toml");
    assert!(
        stderr.contains(expected.to_str().unwrap()) && stderr.contains("train"),
        "stderr: {stderr}"
    );
    assert_eq!(stderr.lines().count(), 1, "one-line diagnostic: {stderr}");
}

#[test]
fn missing_scenario_file_exits_2_and_names_the_path() {
    let (code, stderr) = failure_of(&run(&["gen-data", "--scenario", "/nonexistent/x.toml"]));
    assert_eq!(code, 2);
    assert!(stderr.contains("/nonexistent/x.toml"), "stderr: {stderr}");
}

#[test]
fn a_scenario_with_unknown_keys_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(small_scenario(dir.path())).unwrap();
    std::fs::write(&path, format!("typo_knob = 1\n{text}")).unwrap();
    let (code, stderr) = failure_of(&run(&["simulate", "--scenario", path.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert!(stderr.contains("does not parse"), "stderr: {stderr}");
}

#[test]
fn training_without_a_dataset_exits_2_and_points_at_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let (code, stderr) = failure_of(&run(&["train", "--scenario", scenario.to_str().unwrap()]));
    assert_eq!(code, 2);
    assert!(stderr.contains("gen-data"), "stderr: {stderr}");
}

#[test]
fn unknown_flags_exit_2() {
    let out = run(&["simulate", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_mode_value_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let out = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "fifo",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fifo"), "stderr: {stderr}");
}

#[test]
fn failed_runs_leave_no_partial_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    failure_of(&run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--mode",
        "nfs",
    ]));
    let out = dir.path().join("out");
    assert!(
        !out.exists() || std::fs::read_dir(&out).unwrap().next().is_none(),
        "nfs failure should write nothing"
    );
}
