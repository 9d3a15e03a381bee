//! End-to-end tests of the `epigame` binary: argument handling, exit codes,
//! output layout, and the determinism contract of the emitted files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn epigame() -> Command {
    Command::new(env!("CARGO_BIN_EXE_epigame"))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("process exited without a code")
}

/// A small three-region scenario that trains in well under a second.
fn tiny_scenario(r0: f64) -> String {
    format!(
        r#"
name = "tiny"

[regions]
names = ["A", "B", "C"]
populations = [1.0e6, 2.0e6, 3.0e6]

[travel]
matrix = [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]

[calibration]
r0 = {r0}
infectious_days = 13.0
infection_fatality_rate = 0.0065
latent_days = 5.0

[noise]
sigma_s = 2e-4
sigma_e = 2e-4

[policy]
theta = 0.9

[cost]
productivity = 100.0
life_value = 1.0e6
hospitalization_rate = 1.0e-3
inpatient_cost = 1000.0
attention = 10.0
horizon = 30.0

[initial]
s = [0.99, 0.99, 0.99]
e = [0.005, 0.005, 0.005]
i = [0.005, 0.005, 0.005]

[solver]
stages = 2
sgd_steps_per_stage = 4
batch_size = 4
time_steps = 6
validation_paths = 8
probe_points = 16
hidden_widths = [8]
seed = 11
"#
    )
}

fn write_scenario(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, body).unwrap();
    path
}

#[test]
fn calibrate_resolves_the_shipped_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let output = epigame()
        .args(["calibrate"])
        .arg(shipped("ny-nj-pa.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("gamma 0.2000000000"), "derived gamma missing: {text}");
    assert!(text.contains("lambda 0.0769230769"), "derived lambda missing: {text}");
    assert!(text.contains("kappa 0.0005000000"), "derived kappa missing: {text}");
    assert!(text.contains("0.1370769231"), "diagonal transmission entry missing: {text}");

    let dir = tmp.path().join("ny-nj-pa");
    assert!(dir.join("resolved.json").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("calibrate-manifest.json")).unwrap())
            .unwrap();
    let digest = manifest["config_digest"].as_str().unwrap();
    assert_eq!(digest.len(), 64, "digest should be full sha-256 hex");
    assert_eq!(manifest["command"], "calibrate");
    let resolved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("resolved.json")).unwrap()).unwrap();
    assert_eq!(resolved["digest"].as_str().unwrap(), digest);
}

#[test]
fn missing_required_field_exits_2_and_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let body = tiny_scenario(2.2).replace("productivity = 100.0\n", "");
    let path = write_scenario(tmp.path(), &body);
    let output = epigame()
        .args(["calibrate"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("productivity"),
        "error should name the missing field: {}",
        stderr(&output)
    );
}

#[test]
fn malformed_travel_row_exits_2_and_names_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let body = tiny_scenario(2.2).replace(
        "[[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]",
        "[[0.9, 0.05, 0.25], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]]",
    );
    let path = write_scenario(tmp.path(), &body);
    let output = epigame()
        .args(["calibrate"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    let err = stderr(&output);
    assert!(err.contains("rows[0]"), "error should name the offending row: {err}");
}

#[test]
fn solve_reruns_with_the_same_seed_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), &tiny_scenario(2.2));
    let mut artifacts = Vec::new();
    for run in ["first", "second"] {
        let out_dir = tmp.path().join(run);
        let output = epigame()
            .args(["solve"])
            .arg(&path)
            .arg("--out")
            .arg(&out_dir)
            .args(["--workers", "1"])
            .output()
            .unwrap();
        assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
        let dir = out_dir.join("tiny");
        artifacts.push((
            std::fs::read(dir.join("diagnostics.csv")).unwrap(),
            std::fs::read(dir.join("profile.ckpt.json")).unwrap(),
        ));
    }
    assert_eq!(artifacts[0].0, artifacts[1].0, "diagnostics must be byte-identical across reruns");
    assert_eq!(artifacts[0].1, artifacts[1].1, "checkpoints must be byte-identical across reruns");
}

#[test]
fn degenerate_zero_cost_solve_reports_vanishing_origin_values() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), &tiny_scenario(2.2));
    let output = epigame()
        .args(["solve"])
        .arg(&path)
        .args(["--stages", "1", "--degenerate-zero-cost"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("tiny/solve-manifest.json")).unwrap(),
    )
    .unwrap();
    let values = manifest["value_at_origin"].as_array().unwrap();
    assert_eq!(values.len(), 3);
    for (player, value) in values.iter().enumerate() {
        let v = value.as_f64().unwrap();
        assert!(
            v.abs() <= 1e-3,
            "player {player} origin value {v} should vanish on the zero-cost model"
        );
    }
}

#[test]
fn resume_continues_stage_numbering() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), &tiny_scenario(2.2));
    let output = epigame()
        .args(["solve"])
        .arg(&path)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    let ckpt = tmp.path().join("tiny/profile.ckpt.json");

    let out2 = tmp.path().join("resumed");
    let output = epigame()
        .args(["solve"])
        .arg(&path)
        .arg("--resume")
        .arg(&ckpt)
        .args(["--stages", "4"])
        .arg("--out")
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("at stage 2"), "resume should report its start stage");

    let diagnostics = std::fs::read_to_string(out2.join("tiny/diagnostics.csv")).unwrap();
    let stages: Vec<&str> = diagnostics
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("stage"))
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert!(!stages.is_empty());
    assert!(
        stages.iter().all(|s| *s == "2" || *s == "3"),
        "resumed run should train stages 2 and 3 only, got {stages:?}"
    );

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out2.join("tiny/solve-manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["first_stage"], 2);
    assert_eq!(manifest["stages_completed"], 4);
}

#[test]
fn simulate_emits_the_full_path_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let output = epigame()
        .args(["simulate"])
        .arg(shipped("ny-nj-pa-outbreak.toml"))
        .args(["--fixed-policy", "0.5", "--paths", "256"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));

    let csv_path = tmp.path().join("ny-nj-pa-outbreak/paths.csv");
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&csv_path)
        .unwrap();
    let mut path_ids = std::collections::BTreeSet::new();
    let mut nodes = std::collections::BTreeSet::new();
    let mut regions = std::collections::BTreeSet::new();
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.unwrap();
        path_ids.insert(record[0].to_string());
        nodes.insert(record[1].to_string());
        regions.insert(record[2].to_string());
        rows += 1;
    }
    assert_eq!(path_ids.len(), 256, "distinct path ids");
    assert_eq!(nodes.len(), 41, "grid nodes");
    assert_eq!(regions.len(), 3, "regions");
    assert_eq!(rows, 256 * 41 * 3, "one row per (path, node, region)");

    let raw = std::fs::read_to_string(&csv_path).unwrap();
    assert!(
        raw.starts_with("# config_digest: "),
        "path export should embed the scenario digest"
    );
    assert!(tmp.path().join("ny-nj-pa-outbreak/summary.csv").is_file());
}

#[test]
fn evaluating_inaction_classifies_out_of_control() {
    let tmp = tempfile::tempdir().unwrap();
    let output = epigame()
        .args(["evaluate"])
        .arg(shipped("ny-nj-pa-outbreak.toml"))
        .args(["--fixed-policy", "0", "--paths", "64"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    assert!(stdout(&output).contains("classification: out_of_control"));

    let record: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("ny-nj-pa-outbreak/classification.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(record["label"], "out_of_control");
    assert_eq!(record["threshold"], 0.5);

    let costs = std::fs::read_to_string(tmp.path().join("ny-nj-pa-outbreak/costs.csv")).unwrap();
    let players: Vec<&str> = costs
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("player"))
        .collect();
    assert_eq!(players.len(), 3, "one cost row per player");
}

#[test]
fn probe_on_a_fixed_policy_zeroes_the_matching_deviation() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_scenario(tmp.path(), &tiny_scenario(2.2));
    let output = epigame()
        .args(["evaluate"])
        .arg(&path)
        .args(["--fixed-policy", "0.3", "--paths", "16", "--probe"])
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));

    let probe = std::fs::read_to_string(tmp.path().join("tiny/probe.csv")).unwrap();
    let mut matching_rows = 0;
    for line in probe.lines().filter(|l| !l.starts_with('#') && !l.starts_with("player")) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1] == "constant 0.30" {
            matching_rows += 1;
            let reduction: f64 = fields[3].parse().unwrap();
            assert_eq!(
                reduction, 0.0,
                "deviating to the level the policy already plays must change nothing under common random numbers"
            );
        }
    }
    assert_eq!(matching_rows, 3, "one matching-deviation row per player");

    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(tmp.path().join("tiny/evaluate-manifest.json")).unwrap(),
    )
    .unwrap();
    for verdict in manifest["probe"].as_array().unwrap() {
        let best = verdict["best_reduction"].as_f64().unwrap();
        assert!(
            best >= 0.0,
            "the identity deviation pins the best reduction at or above zero, got {best}"
        );
    }
}

#[test]
fn profile_digest_mismatch_exits_3_unless_forced() {
    let tmp = tempfile::tempdir().unwrap();
    let trained = write_scenario(tmp.path(), &tiny_scenario(2.2));
    let output = epigame()
        .args(["solve"])
        .arg(&trained)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    let ckpt = tmp.path().join("tiny/profile.ckpt.json");

    let other_dir = tempfile::tempdir().unwrap();
    let other = write_scenario(other_dir.path(), &tiny_scenario(2.0));
    let output = epigame()
        .args(["simulate"])
        .arg(&other)
        .arg("--profile")
        .arg(&ckpt)
        .args(["--paths", "8"])
        .arg("--out")
        .arg(other_dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 3, "stderr: {}", stderr(&output));
    assert!(stderr(&output).contains("artifact mismatch"));

    let output = epigame()
        .args(["simulate"])
        .arg(&other)
        .arg("--profile")
        .arg(&ckpt)
        .args(["--paths", "8", "--force"])
        .arg("--out")
        .arg(other_dir.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
}

#[test]
fn solving_without_an_initial_state_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let output = epigame()
        .args(["solve"])
        .arg(shipped("ny-nj-pa.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(
        stderr(&output).contains("initial"),
        "error should point at the missing [initial] section: {}",
        stderr(&output)
    );
}

#[test]
fn verify_list_enumerates_suites_without_running() {
    let output = epigame().args(["verify", "--list"]).output().unwrap();
    assert_eq!(exit_code(&output), 0);
    let text = stdout(&output);
    for suite in [
        "beta-matrix",
        "calibration",
        "conservation",
        "best-response",
        "splitting-identity",
        "gradients",
        "degenerate-solver",
    ] {
        assert!(text.contains(suite), "missing suite {suite}: {text}");
    }
}

#[test]
fn verify_rejects_unknown_suites_with_exit_2() {
    let output = epigame().args(["verify", "no-such-suite"]).output().unwrap();
    assert_eq!(exit_code(&output), 2);
    assert!(stderr(&output).contains("no-such-suite"));
}

#[test]
fn environment_variable_sets_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let output = epigame()
        .args(["calibrate"])
        .arg(shipped("ny-nj-pa.toml"))
        .env("EPIGAME_OUTPUT_ROOT", tmp.path())
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr(&output));
    assert!(tmp.path().join("ny-nj-pa/resolved.json").is_file());
}
