use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_samosa-lab"))
}

const SMALL: &str = r#"{"rounds": 1, "budget": 6, "per_class": 30, "dim": 30, "width": 4, "epochs": 5}"#;

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"alpha": 0.1, "beta": 0.5}"#).unwrap();
    let out = bin().arg("--config").arg(&bad).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha must exceed beta"));

    let missing = bin().args(["--config", "/nonexistent.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let strategy = bin().args(["--strategy", "samosa,wat"]).output().unwrap();
    assert_eq!(strategy.status.code(), Some(2));
    let seeds = bin().args(["--seeds", "x"]).output().unwrap();
    assert_eq!(seeds.status.code(), Some(2));
    let mismatch = bin().args(["--mismatch", "1.5"]).output().unwrap();
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn run_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["--strategy", "random,margin", "--seeds", "2,5", "--rounds", "2", "--budget", "4", "--mismatch", "0.3"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for s in ["random", "margin"] {
        for seed in [2, 5] {
            let text = fs::read_to_string(out_dir.join(s).join(format!("seed_{seed}")).join("metrics.csv")).unwrap();
            let rows: Vec<&str> = text.lines().skip(1).collect();
            assert_eq!(rows.len(), 2);
            // budget 4 → valid + invalid queries sum to 4 per round.
            let f: Vec<&str> = rows[0].split(',').collect();
            assert_eq!(f[0], s);
        }
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["rounds"], 2);
    assert_eq!(manifest["config"]["budget"], 4);
    assert_eq!(manifest["config"]["mismatch_ratio"], 0.3);
    assert_eq!(manifest["seeds"], serde_json::json!([2, 5]));
    assert!(out_dir.join("summary.csv").exists());

    let summary = bin().arg("summarize").arg(&out_dir).output().unwrap();
    assert_eq!(summary.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&summary.stdout).contains("margin"));
}

#[test]
fn seed_count_starts_at_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL.replace("{", r#"{"seed": 7, "#)).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin().arg("--config").arg(&cfg).args(["--strategy", "random", "--seeds", "2"]).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("random/seed_7/metrics.csv").exists());
    assert!(out_dir.join("random/seed_8/metrics.csv").exists());
}

#[test]
fn run_failure_exits_1_with_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"rounds": 1, "budget": 6, "per_class": 30, "dim": 30, "width": 4, "epochs": 5, "lr": 1e300}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = bin().arg("--config").arg(&cfg).args(["--strategy", "random"]).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(out_dir.join("FAILED").exists());
    assert!(out_dir.join("random/seed_0/FAILED").exists());
}

#[test]
fn summarize_missing_runs_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().arg("summarize").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn export_pool_writes_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, SMALL).unwrap();
    let out_dir = dir.path().join("pool");
    let out = bin().args(["export-pool", "--patches", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&out_dir).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let pool = fs::read_to_string(out_dir.join("pool.csv")).unwrap();
    assert_eq!(pool.lines().next().unwrap(), "id,true_class,subclass,is_known,split");
    assert_eq!(pool.lines().count(), 1 + 10 * 30);
    assert!(pool.contains(",atypical,") && pool.contains(",test") && pool.contains(",labeled"));
    let patches = fs::read_to_string(out_dir.join("patches.csv")).unwrap();
    assert_eq!(patches.lines().count(), 1 + 10 * 30 * 4);
}
