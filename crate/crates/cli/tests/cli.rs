use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "[run]\nrounds = 3\nenv_steps_per_round = 16\ntrain_steps_per_round = 8\n\n[dqn]\nbatch_size = 8\n";

fn coopfl(args: &[&str], workers: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopfl")).args(args).env("COOPFL_WORKERS", workers).output().unwrap()
}

fn scenario(text: &str) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    (dir, path)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn run_writes_metrics_with_the_expected_header() {
    let (dir, cfg) = scenario(SMALL);
    let out = dir.path().join("out");
    let result = coopfl(&["run", "--config", s(&cfg), "--out", s(&out)], "1");
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let rows = lines(&out.join("metrics.csv"));
    let mut header = String::from(
        "round,system_throughput_bps,energy_efficiency_bits_per_joule,risk_level,cooperation_level,mean_benign_reward,attackers_active",
    );
    for i in 0..6 {
        header.push_str(&format!(",c_{i},kl_{i}"));
    }
    assert_eq!(rows[0], header);
    assert_eq!(rows.len(), 4);
    for (k, row) in rows[1..].iter().enumerate() {
        assert!(row.starts_with(&format!("{k},")), "{row}");
    }
}

#[test]
fn metadata_records_seed_thresholds_and_defaults() {
    let (dir, cfg) = scenario(SMALL);
    let out = dir.path().join("out");
    let result = coopfl(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "11"], "1");
    assert!(result.status.success());
    let meta = std::fs::read_to_string(out.join("metadata.toml")).unwrap();
    assert!(meta.contains("# seed = 11"));
    assert!(meta.contains("# kl_threshold = "));
    assert!(meta.contains("#   dqn.learning_rate = "));
    assert!(!meta.contains("#   run.seed = "));
    assert!(!meta.contains("#   run.rounds = "));
}

#[test]
fn single_round_gives_one_row() {
    let (dir, cfg) = scenario("[run]\nrounds = 1\nenv_steps_per_round = 8\ntrain_steps_per_round = 4\n");
    let out = dir.path().join("out");
    assert!(coopfl(&["run", "--config", s(&cfg), "--out", s(&out)], "1").status.success());
    assert_eq!(lines(&out.join("metrics.csv")).len(), 2);
}

#[test]
fn missing_config_exits_with_code_two_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.toml");
    let result = coopfl(&["run", "--config", s(&missing)], "1");
    assert_eq!(result.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&result.stderr).contains(s(&missing)));
}

#[test]
fn unknown_key_and_bad_values_exit_with_code_two() {
    for text in ["[run]\nroundz = 3\n", "[strategy]\nkind = \"best\"\n", "[attack]\ngamma = -1.0\n"] {
        let (dir, cfg) = scenario(text);
        let result = coopfl(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("o"))], "1");
        assert_eq!(result.status.code(), Some(2), "{text}");
    }
    let (dir, cfg) = scenario(SMALL);
    let out = dir.path().join("o");
    assert_eq!(coopfl(&["run", "--config", s(&cfg), "--out", s(&out), "--attackers", "7"], "1").status.code(), Some(2));
    assert_eq!(coopfl(&["run", "--config", s(&cfg), "--out", s(&out)], "many").status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let (dir, cfg) = scenario(SMALL);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let result = coopfl(&["run", "--config", s(&cfg), "--out", s(&blocker.join("out"))], "1");
    assert_eq!(result.status.code(), Some(1));
}

#[test]
fn same_seed_gives_identical_metrics_across_worker_counts() {
    let (dir, cfg) = scenario(SMALL);
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let r = coopfl(
            &["run", "--config", s(&cfg), "--out", s(&out), "--attackers", "2", "--attack-kind", "data-poison"],
            workers,
        );
        assert!(r.status.success());
        std::fs::read(out.join("metrics.csv")).unwrap()
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
}

#[test]
fn sweep_writes_one_row_per_framework_and_attacker_count() {
    let (dir, cfg) = scenario(SMALL);
    let out = dir.path().join("sweep");
    let result =
        coopfl(&["sweep", "--config", s(&cfg), "--attackers", "0..2", "--replicas", "2", "--out", s(&out)], "2");
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let rows = lines(&out.join("sweep_summary.csv"));
    assert_eq!(rows.len(), 1 + 2 * 3);
    assert!(rows[1].starts_with("fedavg,0,2,"));
    assert!(rows[4].starts_with("meme-distillation,0,2,"));
    assert_eq!(std::fs::read_dir(out.join("runs")).unwrap().count(), 2 * 3 * 2);
}

#[test]
fn seesaw_writes_one_row_per_round() {
    let (dir, cfg) = scenario(SMALL);
    let out = dir.path().join("seesaw");
    let result = coopfl(
        &["seesaw", "--config", s(&cfg), "--schedule", "2,1,0", "--rounds-per-stage", "2", "--out", s(&out)],
        "1",
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let rows = lines(&out.join("seesaw.csv"));
    assert_eq!(rows.len(), 1 + 3 * 2);
    let active: Vec<&str> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap()).collect();
    assert_eq!(active, ["2", "2", "1", "1", "0", "0"]);
}

#[test]
fn example_config_loads() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let dir = tempfile::tempdir().unwrap();
    let result = coopfl(
        &["seesaw", "--config", s(&cfg), "--schedule", "0", "--rounds-per-stage", "1", "--out", s(dir.path())],
        "1",
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
}
