use std::path::Path;
use std::process::{Command, Output};

fn lagco(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lagco"))
        .args(args)
        .arg("--out")
        .arg(data)
        .env_remove("LAGCO_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(data: &Path, args: &[&str]) -> String {
    let out = lagco(data, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes a config with a short training budget, derived from the one
/// `generate` recorded.
fn quick_config(data: &Path) -> std::path::PathBuf {
    let text = std::fs::read_to_string(data.join("tsp/generate.config.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["train"]["steps"] = 600.into();
    v["train"]["ppo"]["rollout"] = 128.into();
    v["train"]["ppo"]["epochs"] = 2.into();
    v["train"]["test_episodes"] = 2.into();
    v["gae"]["epochs"] = 2.into();
    v["gae"]["pool_factor"] = 2.into();
    v["sweep"]["sweeps"] = 3.into();
    v["strategy"]["repeats"] = 2.into();
    v["data_dir"] = data.to_str().unwrap().into();
    let path = data.join("quick.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn generate_writes_one_file_per_instance() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--env", "tsp", "--count", "101", "--seed", "42"]);
    let n = std::fs::read_dir(dir.path().join("tsp/instances")).unwrap().count();
    assert_eq!(n, 101);
    assert!(dir.path().join("tsp/generate.config.json").exists());
}

#[test]
fn eval_before_sweep_names_the_missing_bounds() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--env", "tsp", "--count", "3"]);
    let out = lagco(dir.path(), &["eval", "--env", "tsp", "--agent", "p-discrete"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing bounds") && err.contains("tsp-000.json"), "{err}");
}

#[test]
fn missing_encoders_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["generate", "--env", "tsp", "--count", "3", "--size", "5"]);
    ok(dir.path(), &["sweep", "--env", "tsp", "--sweeps", "2"]);
    let out = lagco(dir.path(), &["train", "--env", "tsp", "--agent", "projection"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("encoders.ckpt"));
}

#[test]
fn unknown_flags_print_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = lagco(dir.path(), &["train", "--frobnicate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = lagco(dir.path(), &["generate", "--env", "chess"]);
    assert!(!out.status.success());
}

#[test]
fn scale_writes_rows_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["scale", "--env", "placement", "--agent", "projection", "--sizes", "4:8:2", "--episodes", "1", "--sweeps", "1"]);
    assert!(stdout.contains("n^"));
    let csv = std::fs::read_to_string(dir.path().join("placement/scale/projection/scale.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("placement/scale/projection/fit.json")).unwrap()).unwrap();
    assert!(fit["alpha"].is_number());
}

#[test]
fn train_and_eval_are_byte_reproducible() {
    let run = |dir: &Path| {
        ok(dir, &["generate", "--env", "tsp", "--count", "6", "--size", "6", "--seed", "5"]);
        let cfg = quick_config(dir);
        let c = cfg.to_str().unwrap();
        ok(dir, &["sweep", "--config", c]);
        ok(dir, &["pretrain", "--config", c]);
        ok(dir, &["latent", "--config", c]);
        ok(dir, &["train", "--config", c, "--agent", "projection", "--strategy", "S"]);
        ok(dir, &["eval", "--config", c, "--agent", "projection", "--strategy", "S"]);
        std::fs::read(dir.join("tsp/runs/projection/S/scores.csv")).unwrap()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = run(a.path());
    let sb = run(b.path());
    assert!(!sa.is_empty());
    assert_eq!(sa, sb);
    let text = String::from_utf8(sa).unwrap();
    assert!(text.starts_with("env,agent,strategy,seed,instance,split,episode,score,best"));
    // 2 repeats x 6 instances x 2 episodes
    assert_eq!(text.lines().count(), 1 + 2 * 6 * 2);
}
