use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_restless"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fluid_on_the_queue_fixture_matches_the_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fluid", "--scenario", "mmsm-2class"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eq = read_json(&dir.path().join("equilibrium.json"));
    assert_eq!(eq["values"]["1.1.0"], 0.0);
    assert_eq!(eq["values"]["1.1.1"], 0.6);
    assert_eq!(eq["values"]["2.1.0"], 0.4);
    assert_eq!(eq["values"]["2.1.1"], 0.4);
    assert_eq!(eq["objective"], 0.4);
    let csv = fs::read_to_string(dir.path().join("equilibrium.csv")).unwrap();
    assert!(csv.starts_with("k,j,x0,x1\n"));
}

#[test]
fn manifest_lists_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "fluid",
            "--scenario",
            "nonindexable-3state",
            "--x0",
            "3",
            "--sweep",
            "10",
        ],
    );
    assert!(out.status.success());
    let manifest = read_json(&dir.path().join("manifest.json"));
    let listed: Vec<String> = manifest["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let mut on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut sorted = listed.clone();
    sorted.sort();
    assert_eq!(sorted, on_disk);
    assert_eq!(manifest["input"]["scenario"], "nonindexable-3state");
    assert_eq!(manifest["command"], "fluid");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "--seed",
        "7",
        "simulate",
        "--scenario",
        "mmsm-2class",
        "--policy",
        "iota",
        "--r",
        "5",
        "--horizon",
        "50",
        "--series",
        "1",
    ];
    assert!(run(a.path(), &args).status.success());
    assert!(run(b.path(), &args).status.success());
    for name in ["simulation.json", "series.csv"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }
}

#[test]
fn invalid_model_exits_with_violations() {
    let dir = tempfile::tempdir().unwrap();
    let mut model: Value =
        serde_json::from_str(include_str!("../../core/scenarios/mmsm-2class.json")).unwrap();
    model["classes"][0]["gen_passive"][0][0] = serde_json::json!(-1.0);
    let path = dir.path().join("bad.json");
    fs::write(&path, model.to_string()).unwrap();
    let out = run(dir.path(), &["validate", "--model", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_model");
    assert!(!err["violations"].as_array().unwrap().is_empty());
}

#[test]
fn valid_model_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    fs::write(
        &path,
        include_str!("../../core/scenarios/nonindexable-3state.json"),
    )
    .unwrap();
    let out = run(dir.path(), &["validate", "--model", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v = read_json(&dir.path().join("validation.json"));
    assert_eq!(v["valid"], true);
    assert_eq!(v["states"], 3);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["fluid"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        run(
            dir.path(),
            &["fluid", "--scenario", "mmsm-2class", "--format", "xml"]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn unknown_scenario_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fluid", "--scenario", "nope"]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "invalid_input");
}

#[test]
fn nonindexable_class_reports_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "whittle",
            "--scenario",
            "nonindexable-3state",
            "--beta",
            "0.01",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "not_indexable");
    assert!(
        err["witness"]["nu_low"].as_f64().unwrap() < err["witness"]["nu_high"].as_f64().unwrap()
    );
}

#[test]
fn whittle_on_the_queue_fixture_orders_like_iota() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "whittle",
            "--scenario",
            "mmsm-2class",
            "--beta",
            "0.1,0.01,0.001,0.0001",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let w = read_json(&dir.path().join("whittle.json"));
    assert_eq!(w["policy"]["order"], serde_json::json!(["1.1", "2.1"]));
    let csv = fs::read_to_string(dir.path().join("whittle.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("k,j,beta,nu"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);
}

#[test]
fn gaps_table_has_the_figure_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "--format",
            "csv",
            "gaps",
            "--scenario",
            "nonindexable-3state",
            "--x0",
            "1..10",
            "--alpha",
            "1",
        ],
    );
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("gaps.csv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), csv);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("X0,policy,g_policy,g_opt,gap_percent"));
    assert_eq!(lines.count(), 60);
    let summary = read_json(&dir.path().join("gaps.json"));
    assert_eq!(summary["row_minimum"][1]["smallest_gap"], "prio1");
}

#[test]
fn policies_follow_the_selection_table() {
    for (x0, name) in [("2", "prio1"), ("3", "prio12"), ("6", "prio21")] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(
            dir.path(),
            &["policies", "--scenario", "nonindexable-3state", "--x0", x0],
        );
        assert!(out.status.success());
        let p = read_json(&dir.path().join("policies.json"));
        assert_eq!(p["selected_name"], name, "x0 = {x0}");
        assert!(!p["members"].as_array().unwrap().is_empty());
    }
}

#[test]
fn exact_gain_of_two_bandits() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["exact", "--scenario", "nonindexable-3state", "--x0", "2"],
    );
    assert!(out.status.success());
    let g = read_json(&dir.path().join("exact.json"))["gain"]
        .as_f64()
        .unwrap();
    assert!((g + 1.47879).abs() < 1e-4, "{g}");
}

#[test]
fn attractor_for_the_queue_index_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "attractor",
            "--scenario",
            "mmsm-2class",
            "--policy",
            "iota",
            "--samples",
            "8",
        ],
    );
    assert!(out.status.success());
    let a = read_json(&dir.path().join("attractor.json"));
    assert_eq!(a["report"]["verdict"], "pass (sampled)");
    assert!(dir.path().join("worst_trajectory.csv").exists());
}

#[test]
fn convergence_table_from_several_scalings() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "mmsm-2class",
            "--policy",
            "iota",
            "--r",
            "1,10",
            "--horizon",
            "200",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("r,estimate,half_width,v_star,relative_error")
    );
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn policy_file_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    fs::write(&path, r#"{"order":["2.1","1.1"],"never_active":[]}"#).unwrap();
    let out = run(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "mmsm-2class",
            "--policy",
            path.to_str().unwrap(),
            "--r",
            "2",
            "--horizon",
            "20",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let s = read_json(&dir.path().join("simulation.json"));
    assert_eq!(s["policy"]["order"][0], "2.1");
}
