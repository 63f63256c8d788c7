//! End-to-end tests of the `brk` binary: configuration handling, artifact
//! layout, summary schema, exit codes, and reproducibility.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn brk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brk"))
        .args(args)
        .output()
        .expect("the binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).expect("config writes");
    path
}

fn summary(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("summary.json")).expect("summary exists");
    serde_json::from_str(&text).expect("summary parses")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn riemann_burgers_emits_one_shock_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let config = write_config(
        tmp.path(),
        "[system]\nname = \"burgers\"\n\n[data]\nu_minus = 1.0\nu_plus = -1.0\n",
    );
    let out = brk(&[
        "riemann",
        "--config",
        config.to_str().unwrap(),
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let doc = summary(&out_dir);
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["command"], "riemann");
    assert_eq!(doc["passed"], true);
    assert!(doc["validations"].as_array().unwrap().len() >= 4);
    assert!(doc["error"].is_null());

    let fan: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("fan.json")).expect("fan.json exists"),
    )
    .unwrap();
    assert_eq!(fan["schema"], 1);
    let waves = fan["waves"].as_array().unwrap();
    assert_eq!(waves.len(), 1, "one wave expected: {waves:?}");
    assert_eq!(waves[0]["kind"], "Shock");
    assert!(waves[0]["speed_lo"].as_f64().unwrap().abs() <= 1e-10);

    // CSV samples carry full double precision.
    let csv = std::fs::read_to_string(out_dir.join("solution.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("xi,u1"));
    let first = lines.next().unwrap();
    assert!(first.split(',').all(|tok| tok.contains('e')), "not scientific: {first}");
}

#[test]
fn effective_config_is_echoed_with_defaults_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let config = write_config(
        tmp.path(),
        "[system]\nname = \"burgers\"\n\n[data]\nu_minus = 1.0\nu_plus = -1.0\n",
    );
    let out = brk(&[
        "riemann",
        "--config",
        config.to_str().unwrap(),
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
        "--set",
        "numerics.tol_rh=1e-9",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let echoed =
        std::fs::read_to_string(out_dir.join("effective-config.toml")).expect("echo exists");
    let doc: toml::Table = echoed.parse().expect("echo parses");
    let numerics = doc["numerics"].as_table().unwrap();
    assert_eq!(numerics["tol_rh"].as_float(), Some(1e-9));
    // Defaults are materialised, not left implicit.
    assert!(numerics.contains_key("seed"));
    assert_eq!(doc["problem"]["kind"].as_str(), Some("riemann"));
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "[system]\nname = \"burgers\"\nturbulence = true\n\n[data]\nu_minus = 1.0\nu_plus = -1.0\n",
    );
    let out = brk(&["riemann", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("turbulence"), "stderr: {}", stderr_of(&out));
}

#[test]
fn negative_tolerance_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "[system]\nname = \"burgers\"\n\n[data]\nu_minus = 1.0\nu_plus = -1.0\n",
    );
    let out = brk(&[
        "riemann",
        "--config",
        config.to_str().unwrap(),
        "--set",
        "numerics.tol_rh=-1e-10",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr_of(&out).contains("numerics.tol_rh must be > 0"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn dimension_mismatch_is_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "[system]\nname = \"burgers\"\n\n[data]\nu_minus = [1.0, 2.0]\nu_plus = -1.0\n",
    );
    let out = brk(&["riemann", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("data.u_minus") && err.contains("n = 1"), "stderr: {err}");
}

#[test]
fn malformed_toml_reports_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), "[system\nname = \"burgers\"\n");
    let out = brk(&["riemann", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("line 1") && err.contains("column"), "stderr: {err}");
}

#[test]
fn boundary_riemann_writes_layer_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&[
        "boundary-riemann",
        "--set",
        "system.name=burgers",
        "--set",
        "data.u_0=-1.0",
        "--set",
        "data.u_d=0.0",
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], true);
    let trace = doc["metrics"]["trace"].as_array().unwrap();
    assert!((trace[0].as_f64().unwrap() - (-1.0)).abs() <= 1e-6);
    assert!(doc["metrics"]["layer_decay_rate"].as_f64().unwrap() > 0.5);

    let layer = std::fs::read_to_string(out_dir.join("layer.csv")).expect("layer.csv exists");
    assert!(layer.starts_with("y,w1\n"));
    assert!(layer.lines().count() > 10);
    assert!(out_dir.join("fan.json").exists() && out_dir.join("solution.csv").exists());
}

#[test]
fn unsolvable_boundary_data_fail_with_error_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&[
        "boundary-riemann",
        "--set",
        "system.name=p-system",
        "--set",
        "data.u_0=[1.0, 0.0]",
        "--set",
        "data.u_d=[0.2, 1.5]",
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert_eq!(out.status.code(), Some(1));

    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], false);
    let message = doc["error"].as_str().expect("error recorded");
    assert!(!message.is_empty());
    assert!(!out_dir.join("fan.json").exists(), "no fan artifact on failure");
}

#[test]
fn compare_limits_writes_table_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        concat!(
            "[system]\nname = \"linear2\"\nmatrix = [[-1.0, 0.0], [0.0, 1.0]]\n\n",
            "[data]\nu_0 = [1.0, 2.0]\nu_d = [1.05, 2.0]\n\n",
            "[problem]\neps_list = [0.08, 0.04, 0.02]\n",
        ),
    );
    let mut csvs = Vec::new();
    let mut summaries = Vec::new();
    for run in 0..2 {
        let out_dir = tmp.path().join(format!("out{run}"));
        let out = brk(&[
            "compare-limits",
            "--config",
            config.to_str().unwrap(),
            "--set",
            &format!("output.dir={:?}", out_dir.to_str().unwrap()),
        ]);
        assert!(out.status.success(), "stderr: {}", stderr_of(&out));
        csvs.push(std::fs::read(out_dir.join("comparison.csv")).unwrap());
        summaries.push(summary(&out_dir));

        let text = String::from_utf8(csvs[run].clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("eps,d_uz,d_ufan,d_zfan,p_hat,error"));
        assert_eq!(lines.count(), 3, "three sweep rows");
    }
    assert_eq!(csvs[0], csvs[1], "comparison.csv differs between identical runs");
    assert_eq!(summaries[0], summaries[1]);

    let doc = &summaries[0];
    assert_eq!(doc["passed"], true);
    let d_uz: Vec<f64> = doc["metrics"]["d_uz"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(d_uz[0] > d_uz[1] && d_uz[1] > d_uz[2], "not decreasing: {d_uz:?}");
}

#[test]
fn selfsimilar_sim_writes_profile() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&[
        "selfsimilar-sim",
        "--set",
        "system.name=burgers",
        "--set",
        "data.u_0=0.3",
        "--set",
        "data.u_d=-0.2",
        "--set",
        "problem.epsilon=0.05",
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let profile = std::fs::read_to_string(out_dir.join("profile.csv")).unwrap();
    assert!(profile.starts_with("xi,u1\n"));
    assert!(profile.lines().count() > 16);
    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], true);
    assert!(doc["metrics"]["cells"].as_u64().unwrap() >= 16);
}

#[test]
fn classical_sim_writes_slices_and_entropy() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&[
        "classical-sim",
        "--set",
        "system.name=burgers",
        "--set",
        "data.u_0=0.3",
        "--set",
        "data.u_d=-0.2",
        "--set",
        "problem.epsilon=0.05",
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("slice_00.csv").exists());
    let entropy = std::fs::read_to_string(out_dir.join("entropy.csv")).unwrap();
    assert!(entropy.starts_with("t,balance\n"));
    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], true);
    assert!(doc["metrics"]["entropy_max_rise"].as_f64().is_some());
}

#[test]
fn b_dependence_reports_the_mixing_gap() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let config = write_config(
        tmp.path(),
        concat!(
            "[system]\nname = \"linear2\"\nmatrix = [[-1.0, 0.0], [0.0, 1.0]]\n\n",
            "[data]\nu_0 = [1.0, 2.0]\nu_d = [3.0, 4.0]\n\n",
            "[problem]\nepsilon = 0.02\n",
            "viscosity_1 = [[1.0, 0.0], [0.0, 1.0]]\n",
            "viscosity_2 = [[1.0, 0.5], [0.5, 1.0]]\n",
        ),
    );
    let out = brk(&[
        "b-dependence",
        "--config",
        config.to_str().unwrap(),
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], true);
    let gap = doc["metrics"]["gap"].as_f64().unwrap();
    assert!(gap >= 0.3, "mixing viscosities should shift the trace; gap = {gap}");

    let gap_doc: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("b_dependence.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(gap_doc["schema"], 1);
    assert!(out_dir.join("solution_1.csv").exists() && out_dir.join("solution_2.csv").exists());
}

#[test]
fn validate_emits_report_without_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&[
        "validate",
        "--set",
        "system.name=p-system",
        "--set",
        "data.u_0=[1.0, 0.2]",
        "--set",
        "data.u_d=[1.0, 0.22]",
        "--set",
        &format!("output.dir={:?}", out_dir.to_str().unwrap()),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let doc = summary(&out_dir);
    assert_eq!(doc["passed"], true);
    let checks = doc["validations"].as_array().unwrap();
    assert!(checks.len() >= 5);
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(!out_dir.join("fan.json").exists() && !out_dir.join("solution.csv").exists());
}

#[test]
fn output_root_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_brk"))
        .args([
            "riemann",
            "--set",
            "system.name=burgers",
            "--set",
            "data.u_minus=1.0",
            "--set",
            "data.u_plus=-1.0",
        ])
        .env("BRK_OUTPUT_DIR", &out_dir)
        .output()
        .expect("the binary runs");
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(out_dir.join("summary.json").exists());
    assert!(out_dir.join("effective-config.toml").exists());
}

#[test]
fn suite_runs_the_acceptance_battery() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = brk(&["suite", "--set", &format!("output.dir={:?}", out_dir.to_str().unwrap())]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "stdout: {stdout}\nstderr: {}", stderr_of(&out));
    assert!(stdout.matches("PASS").count() >= 10, "stdout: {stdout}");

    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("suite.json")).unwrap())
            .unwrap();
    assert_eq!(doc["schema"], 1);
    let criteria = doc["criteria"].as_array().unwrap();
    assert_eq!(criteria.len(), 10);
    assert!(criteria.iter().all(|c| c["passed"] == true), "criteria: {criteria:?}");

    let sum = summary(&out_dir);
    assert_eq!(sum["passed"], true);
    assert_eq!(sum["metrics"]["criteria_passed"], 10);
}
