use std::process::{Command, Output};

use serde_json::Value;

fn dmech(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmech")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn close(v: &Value, expected: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - expected).abs() <= tol
}

#[test]
fn oracle_example_one() {
    let v = json(&dmech(&["oracle", "example1"]));
    assert!(close(&v["x"][0], 0.5, 1e-12) && close(&v["x"][1], 0.5, 1e-12));
    assert!(close(&v["p"][0], -0.5, 1e-12));
    assert!(close(&v["value"], 0.25, 1e-12));
}

#[test]
fn sweep_writes_csv_within_bound() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = dmech(&[
        "sweep-ic",
        "example1",
        "--tax",
        "groves",
        "--deviant",
        "stackelberg",
        "--n",
        "10,100,1000",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    let v = json(&out);
    assert_eq!(v["pass"], Value::Bool(true));
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,u_honest,u_deviant,gain,bound,dist,status"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let gain: f64 = row[3].parse().unwrap();
        let bound: f64 = row[4].parse().unwrap();
        assert!(gain <= bound + 1e-9);
    }
}

#[test]
fn consensus_linear_path() {
    let v = json(&dmech(&["run-consensus", "path3", "--alg", "linear", "--n", "1000"]));
    for x in v["x"].as_array().unwrap() {
        assert!(close(x, 1.0, 1e-2));
    }
}

#[test]
fn transcript_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    let run = json(&dmech(&[
        "run-dd",
        "example1",
        "--deviant",
        "stackelberg",
        "--tax",
        "price",
        "--n",
        "1000",
        "--transcript",
        log.to_str().unwrap(),
    ]));
    let again_log = dir.path().join("again.jsonl");
    dmech(&[
        "run-dd",
        "example1",
        "--deviant",
        "stackelberg",
        "--tax",
        "price",
        "--n",
        "1000",
        "--transcript",
        again_log.to_str().unwrap(),
    ]);
    assert_eq!(std::fs::read(&log).unwrap(), std::fs::read(&again_log).unwrap());
    let replay = json(&dmech(&["replay", log.to_str().unwrap()]));
    assert_eq!(replay["x"], run["x"]);
    assert_eq!(replay["t"], run["t"]);
}

#[test]
fn tampered_transcript_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("run.jsonl");
    json(&dmech(&["run-consensus", "path3", "--alg", "dd", "--transcript", log.to_str().unwrap()]));
    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = text.replacen("\"x\":1.0", "\"x\":1.5", 1);
    assert_ne!(text, tampered);
    std::fs::write(&log, tampered).unwrap();
    assert_eq!(dmech(&["replay", log.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn direct_vcg_example_one() {
    let v = json(&dmech(&["run-direct", "example1", "--tax", "vcg"]));
    assert!(close(&v["t"][0], 0.125, 1e-12));
    let v = json(&dmech(&["run-direct", "example1", "--tax", "vcg", "--baseline", "excluded"]));
    assert!(close(&v["t"][0], -0.375, 1e-12));
}

#[test]
fn exit_codes() {
    assert_eq!(dmech(&["oracle", "no-such-scenario"]).status.code(), Some(2));
    assert_eq!(dmech(&["run-dd", "example1", "--n", "0"]).status.code(), Some(2));
    assert_eq!(dmech(&["run-consensus", "path3", "--alg", "linear", "--alpha", "0.9"]).status.code(), Some(2));
    assert_eq!(dmech(&["run-dd", "example1", "--deviant", "bogus"]).status.code(), Some(2));
    assert_eq!(dmech(&["frobnicate"]).status.code(), Some(2));
    let stuck = dmech(&[
        "run-consensus",
        "path3-dual",
        "--alg",
        "dd",
        "--deviant",
        "constant:0",
        "--round-cap",
        "500",
    ]);
    assert_eq!(stuck.status.code(), Some(1));
}

#[test]
fn scenario_file_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.toml");
    std::fs::write(
        &path,
        r#"
kind = "consensus"
mechanism = "alg2"
agents = [{ theta = 0.0 }, { theta = 1.0 }]
[consensus]
edges = [[0, 1]]
"#,
    )
    .unwrap();
    let v = json(&dmech(&["run-consensus", path.to_str().unwrap(), "--alg", "dd", "--n", "10000"]));
    assert!(close(&v["x"][0], 0.5, 1e-3));
    assert!(close(&v["t"][0], 0.25, 1e-3));
}
