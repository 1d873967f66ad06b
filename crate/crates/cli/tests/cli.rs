use std::path::Path;
use std::process::{Command, Output};

fn nestfit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nestfit")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nestfit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn stages_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["build-circuit", "--code", "repetition", "--uniform", "0.005", "--out", "rep.json"]);
    ok(d, &["build-circuit", "--code", "square", "--uniform", "0.005", "--out", "sq.json"]);
    ok(d, &["build-nest", "--circuit", "rep.json", "--out", "nest_rep.json", "--plot-data", "plot.json"]);
    ok(d, &["build-nest", "--circuit", "sq.json", "--out", "nest_sq.json"]);
    ok(d, &["build-nest", "--circuit", "sq.json", "--stabilizer", "X", "--out", "nest_sqx.json"]);
    ok(d, &["--threads", "1", "simulate", "--circuit", "rep.json", "--rounds", "100000", "--seed", "1", "--out", "rep.mrec"]);
    ok(d, &["simulate", "--circuit", "sq.json", "--rounds", "100000", "--seed", "2", "--out", "sq.mrec"]);
    ok(d, &["extract", "--record", "rep.mrec", "--nest", "nest_rep.json", "--out", "est_rep.json"]);
    ok(d, &["extract", "--record", "sq.mrec", "--nest", "nest_sq.json", "--out", "est_sq.json"]);
    ok(d, &["extract", "--record", "sq.mrec", "--nest", "nest_sqx.json", "--out", "est_sqx.json"]);
    ok(
        d,
        &[
            "invert",
            "--est",
            "est_rep.json",
            "--est",
            "est_sq.json",
            "--est",
            "est_sqx.json",
            "--nest",
            "nest_rep.json",
            "--nest",
            "nest_sq.json",
            "--nest",
            "nest_sqx.json",
            "--out",
            "fitted.json",
        ],
    );
    assert!(d.join("fitted.fit.json").is_file() && d.join("plot.json").is_file());
    std::fs::write(d.join("truth.json"), nestfit::circuit::ModelSet::uniform(0.005).unwrap().to_json()).unwrap();
    let verdict = ok(
        d,
        &["validate", "--circuit", "rep.json", "--models", "fitted.json", "--truth", "truth.json", "--trials", "2000", "--seed", "3"],
    );
    let v: serde_json::Value = serde_json::from_str(&verdict).unwrap();
    assert!(v["comparison"]["verdict"].is_string());
    ok(d, &["correlate", "--record", "sq.mrec", "--circuit", "sq.json", "--out", "corr.json"]);
    assert!(d.join("corr.json").is_file());
}

#[test]
fn oracle_prints_single_patterns_and_the_table() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["build-circuit", "--code", "repetition", "--out", "rep.json"]);
    let single: serde_json::Value =
        serde_json::from_str(&ok(d, &["oracle", "--circuit", "rep.json", "--gate", "I2", "--pauli", "X"])).unwrap();
    assert_eq!(single["events"].as_array().unwrap().len(), 2);
    let table: serde_json::Value = serde_json::from_str(&ok(d, &["oracle", "--circuit", "rep.json", "--table"])).unwrap();
    assert_eq!(table.as_array().unwrap().len(), 34);
    assert!(ok(d, &["oracle", "--circuit", "rep.json", "--table", "--text"]).starts_with("error\t"));
}

#[test]
fn exit_codes_separate_config_errors_from_stage_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(
        nestfit(d, &["simulate", "--circuit", "absent.json", "--rounds", "10", "--seed", "1", "--out", "r.mrec"]).status.code(),
        Some(2)
    );
    ok(d, &["build-circuit", "--code", "repetition", "--out", "rep.json"]);
    assert_ne!(nestfit(d, &["simulate", "--circuit", "rep.json", "--rounds", "10", "--out", "r.mrec"]).status.code(), Some(0));
    assert_eq!(nestfit(d, &["roundtrip", "--seed", "1", "--out", "run", "--rounds", "0"]).status.code(), Some(2));
    assert!(!d.join("run").exists());
    std::fs::write(d.join("occupied"), "x").unwrap();
    assert_eq!(nestfit(d, &["roundtrip", "--seed", "1", "--out", "occupied", "--rounds", "20000"]).status.code(), Some(3));
}

#[test]
fn roundtrip_flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), r#"{"seed": 5, "output_dir": "ignored", "rounds": 7}"#).unwrap();
    let out =
        nestfit(d, &["roundtrip", "--config", "cfg.json", "--out", "run", "--rounds", "100000", "--trials", "2000", "--no-correlation"]);
    let code = out.status.code().unwrap();
    assert!(code == 0 || code == 4, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("run/report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert_eq!(report["rounds"], 100000);
    assert!(!d.join("ignored").exists());
}
