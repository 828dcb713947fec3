use std::path::Path;
use std::process::{Command, Output};

fn stylecraft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stylecraft"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .env_remove("OPENAI_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const TINY: &[&str] = &["--steps", "256", "--seeds", "1", "--seed", "3"];

fn prepared(events: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&stylecraft(dir.path(), &["synth", "--events", events, "--horizon", "8", "--seed", "4"]));
    ok(&stylecraft(dir.path(), &["split", "--test-fraction", "0.15", "--seed", "1"]));
    dir
}

#[test]
fn split_of_100_events_is_85_15() {
    let dir = prepared("100");
    let out = ok(&stylecraft(dir.path(), &["split", "--test-fraction", "0.15", "--seed", "1"]));
    assert_eq!(out.trim(), "85 15");
}

#[test]
fn config_file_supplies_split_fraction_and_flags_override_it() {
    let dir = prepared("40");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[split]\ntest_fraction = 0.25\nseed = 2\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    assert_eq!(ok(&stylecraft(dir.path(), &["--config", cfg, "split"])).trim(), "30 10");
    assert_eq!(ok(&stylecraft(dir.path(), &["--config", cfg, "split", "--test-fraction", "0.5"])).trim(), "20 20");
}

#[test]
fn train_reports_one_return_per_seed() {
    let dir = prepared("30");
    let reward = dir.path().join("r.reward");
    std::fs::write(&reward, "-pow(accel - 0.5, 2)\n").unwrap();
    let policy = dir.path().join("pol");
    let out = ok(&stylecraft(
        dir.path(),
        &["train", "--reward", reward.to_str().unwrap(), "--out", policy.to_str().unwrap(), "--steps", "256", "--seeds", "5"],
    ));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["per_seed_returns"].as_array().unwrap().len(), 5);

    let report = ok(&stylecraft(dir.path(), &["eval", "--policy", policy.to_str().unwrap()]));
    let r: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(r["summaries"].as_array().unwrap().len(), 6);

    let event = std::fs::read_to_string(dir.path().join("test.csv")).unwrap();
    let id = event.lines().nth(1).unwrap().split(',').next().unwrap().to_string();
    let clip = ok(&stylecraft(dir.path(), &["export-clip", "--policy", policy.to_str().unwrap(), "--event", &id]));
    let c: serde_json::Value = serde_json::from_str(&clip).unwrap();
    assert!(c["frames"].as_array().unwrap().len() >= 2);
}

#[test]
fn scripted_run_is_reproducible() {
    let dir = prepared("30");
    let mut seed_args = vec!["seed-db"];
    seed_args.extend_from_slice(TINY);
    ok(&stylecraft(dir.path(), &seed_args));
    let mut run_args = vec!["run", "Drive aggressively.", "--dry-run"];
    run_args.extend_from_slice(TINY);
    let a = ok(&stylecraft(dir.path(), &run_args));
    let b = ok(&stylecraft(dir.path(), &run_args));
    assert_eq!(a, b);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["retrieved"].as_array().unwrap().len(), 3);
    assert_eq!(v["selected_metrics"].as_array().unwrap().len(), 2);

    // persisting run, then the comparison batch can look the command up
    let mut persist = vec!["run", "Drive aggressively.", "--m", "0"];
    persist.extend_from_slice(TINY);
    ok(&stylecraft(dir.path(), &persist));
    let n = ok(&stylecraft(dir.path(), &["make-comparisons", "--command", "Drive aggressively.", "--events", "3"]));
    assert_eq!(n.trim(), "3");
    assert!(dir.path().join("comparisons.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stylecraft(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(stylecraft(dir.path(), &["split", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(stylecraft(dir.path(), &["split"]).status.code(), Some(2), "missing events file is a data error");
    let dir = prepared("20");
    let out = stylecraft(dir.path(), &["seed-db", "--mode", "live", "--steps", "256", "--seeds", "1"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let bad = dir.path().join("bad.reward");
    std::fs::write(&bad, "min(speed,").unwrap();
    assert_eq!(stylecraft(dir.path(), &["train", "--reward", bad.to_str().unwrap()]).status.code(), Some(2));
    let good = dir.path().join("good.reward");
    std::fs::write(&good, "speed").unwrap();
    assert_eq!(stylecraft(dir.path(), &["train", "--reward", good.to_str().unwrap(), "--seeds", "0"]).status.code(), Some(1));
}
