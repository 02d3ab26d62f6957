use std::path::Path;
use std::process::Command;

use piper::harness::{
    read_csv, run_experiment, seed_dir, EpisodeRow, ExperimentConfig, MetricsRow, PolicyCheckpoint, EPISODES_FILE,
    METRICS_COLUMNS, METRICS_FILE, POLICY_FILE,
};

fn tiny(name: &str, piper: bool) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: name.into(),
        piper_enabled: piper,
        total_steps: 2000,
        eval_interval: 1000,
        eval_episodes: 10,
        seeds: vec![3],
        ..ExperimentConfig::default()
    };
    cfg.ppo.rollout_len = 512;
    cfg.piper.pinn_warmup = 200;
    cfg.piper.pinn_batch = 64;
    cfg
}

fn metrics(dir: &Path, seed: u64) -> Vec<MetricsRow> {
    read_csv(&seed_dir(dir, seed).join(METRICS_FILE)).unwrap()
}

/// Every column except wall-clock time, bit for bit.
fn deterministic_part(rows: &[MetricsRow]) -> Vec<[u64; 6]> {
    rows.iter()
        .map(|r| {
            [
                r.step as u64,
                r.success_rate.to_bits(),
                r.final_error_m.to_bits(),
                r.l_phys.to_bits(),
                r.r_energy.to_bits(),
                r.pinn_loss.to_bits(),
            ]
        })
        .collect()
}

#[test]
fn short_run_writes_learning_curves() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("smoke");
    let summary = run_experiment(&tiny("smoke", true), &dir).unwrap();
    assert!(summary.failed.is_empty(), "{:?}", summary.failed);

    let text = std::fs::read_to_string(seed_dir(&dir, 3).join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));
    let rows = metrics(&dir, 3);
    assert!(rows.len() >= 2);
    assert_eq!(rows.last().unwrap().step, 2000);
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.success_rate) && r.final_error_m >= 0.0));
    assert!(rows.last().unwrap().pinn_loss.is_finite());

    let episodes: Vec<EpisodeRow> = read_csv(&seed_dir(&dir, 3).join(EPISODES_FILE)).unwrap();
    assert_eq!(episodes.len(), rows.len() * 10);
}

#[test]
fn reruns_are_identical_apart_from_wall_time() {
    let root = tempfile::tempdir().unwrap();
    for piper in [false, true] {
        let cfg = tiny("det", piper);
        run_experiment(&cfg, &root.path().join("a")).unwrap();
        run_experiment(&cfg, &root.path().join("b")).unwrap();
        assert_eq!(
            deterministic_part(&metrics(&root.path().join("a"), 3)),
            deterministic_part(&metrics(&root.path().join("b"), 3))
        );
    }
}

#[test]
fn saved_policy_reproduces_the_last_evaluation() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("ck");
    run_experiment(&tiny("ck", false), &dir).unwrap();
    let ck = PolicyCheckpoint::load(&seed_dir(&dir, 3).join(POLICY_FILE)).unwrap();
    let eval = ck.evaluate(10, 3).unwrap();
    let rows = metrics(&dir, 3);
    let last = rows.last().unwrap();
    assert_eq!(eval.success_rate(), last.success_rate);
    assert_eq!(eval.mean_final_error(), last.final_error_m);
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap();
            count += 1;
        }
    }
    assert!(count >= 6);
}

#[test]
fn cli_train_eval_compare() {
    let root = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_piper");
    for (name, piper) in [("base", false), ("phys", true)] {
        let path = root.path().join(format!("{name}.json"));
        std::fs::write(&path, tiny(name, piper).to_json()).unwrap();
        let out = Command::new(bin)
            .args(["train", "--config"])
            .arg(&path)
            .env("PIPER_RUN_ROOT", root.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ck = seed_dir(&root.path().join("base"), 3).join(POLICY_FILE);
    let out = Command::new(bin)
        .args(["eval", "--episodes", "5", "--seed", "1", "--checkpoint"])
        .arg(&ck)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("5 episodes"));

    let out = Command::new(bin)
        .args(["compare", "--baseline", "base", "--piper", "phys"])
        .env("PIPER_RUN_ROOT", root.path())
        .current_dir(root.path().join("base"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("efficiency gain"));

    let out = Command::new(bin).args(["train", "--config", "missing.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_self_checks_pass() {
    let bin = env!("CARGO_BIN_EXE_piper");
    let out = Command::new(bin).args(["dyncheck", "--states", "50"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let out = Command::new(bin).arg("gradcheck").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
