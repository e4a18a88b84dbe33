use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &str = r#"{
  "search": {"hidden_widths": [16], "hidden_depths": [1], "learning_rates": [0.01]},
  "update_budget": {"max_epochs": 100, "patience": 20, "mini_batch_size": 32},
  "explain": {"background_rows": 20, "eval_rows": 20, "seed": 0},
  "drift": {"bins": 10, "permutations": 99, "seed": 0}
}"#;

fn tlupdate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlupdate"))
        .arg("--config")
        .arg(dir.join("config.json"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), QUICK).unwrap();
    dir
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    stdout
}

#[test]
fn stage_commands_chain() {
    let dir = setup();
    let d = dir.path();
    ok(&tlupdate(d, &["generate", "--days", "30", "--drift-day", "12"]));
    let data = d.join("data.csv");
    let data = data.to_str().unwrap();
    ok(&tlupdate(d, &["train", "--data", data]));
    for f in ["model.json", "training.json", "trials.csv"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let model = d.join("model.json");
    let training = d.join("training.json");
    let out = ok(&tlupdate(
        d,
        &["replay", "--model", model.to_str().unwrap(), "--data", data, "--training", training.to_str().unwrap()],
    ));
    assert!(out.contains("trigger fired on"), "{out}");
    let trigger: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("trigger.json")).unwrap()).unwrap();
    let fire = trigger["fire_date"].as_str().unwrap().to_string();

    ok(&tlupdate(
        d,
        &["update", "--model", model.to_str().unwrap(), "--data", data, "--fire-date", &fire, "--strategy", "etl"],
    ));
    let etl = d.join("models/etl.json");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&etl).unwrap()).unwrap();
    assert_eq!(doc["kind"], "ensemble");
    assert_eq!(doc["members"].as_array().unwrap().len(), 2);

    let out = ok(&tlupdate(d, &["explain", "--model", etl.to_str().unwrap(), "--data", data, "--tag", "etl"]));
    assert!(out.contains("top feature"));
    assert!(d.join("profile_etl.json").exists());
    assert!(d.join("attributions_etl.csv").exists());
}

#[test]
fn run_then_report() {
    let dir = setup();
    let d = dir.path();
    let out = ok(&tlupdate(d, &["--seed", "4", "run"]));
    assert!(out.contains("trigger fired on"), "{out}");
    let manifest: Vec<String> = serde_json::from_str(&fs::read_to_string(d.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest.len() >= 6);
    let summary = ok(&tlupdate(d, &["report"]));
    assert!(summary.contains("lltl") && summary.contains("stage,seconds"));
}

#[test]
fn exit_codes() {
    let dir = setup();
    let d = dir.path();
    fs::write(d.join("config.json"), r#"{"strategies": []}"#).unwrap();
    assert_eq!(tlupdate(d, &["run"]).status.code(), Some(2));
    fs::write(d.join("config.json"), "{}").unwrap();
    let missing = d.join("missing.csv");
    assert_eq!(tlupdate(d, &["train", "--data", missing.to_str().unwrap()]).status.code(), Some(3));
    fs::write(d.join("short.csv"), "Timestamp,x\n2024-01-01T00:00:00Z,1\n").unwrap();
    let short = d.join("short.csv");
    assert_eq!(tlupdate(d, &["train", "--data", short.to_str().unwrap()]).status.code(), Some(3));
}
