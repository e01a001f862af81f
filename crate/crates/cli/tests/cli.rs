use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_strat-anytime"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p_values(path: &Path) -> Vec<String> {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let col = rd.headers().unwrap().iter().position(|h| h == "p_value").unwrap();
    rd.records().map(|r| r.unwrap()[col].to_string()).collect()
}

#[test]
fn simulated_trajectories_replay_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        json!({
            "name": "replay",
            "populations": [
                { "generator": { "kind": "bernoulli", "p": [0.55, 0.85] }, "sizes": [60, 60] }
            ],
            "methods": [
                { "strategy": "banded", "G": 10, "bets": { "rule": "agrapa", "c": 0.75 }, "selection": "round_robin" },
                { "strategy": "lcb", "bets": { "rule": "inverse", "l": 0.1, "u": 0.9 }, "selection": "round_robin", "mode": "without_replacement" },
                { "strategy": "brute_force", "bets": { "rule": "kelly", "family": "bernoulli" }, "selection": "round_robin" }
            ],
            "replicates": 3,
            "cap": 300
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    run_ok(bin().args(["simulate", "--seed", "7", "--threads", "2", "--trajectories", "2", "--config"]).arg(&config).arg("--out").arg(&out));
    for f in ["raw.csv", "aggregate.csv", "timing.csv", "metadata.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let traj = out.join("trajectories");
    let mut replayed = 0;
    for entry in fs::read_dir(&traj).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().unwrap() != "csv" {
            continue;
        }
        let setup = path.with_extension("json");
        let audit_dir = dir.path().join(format!("audit_{replayed}"));
        let res = run_ok(bin().arg("audit").arg("--replay").arg("--config").arg(&setup).arg("--data").arg(&path).arg("--out").arg(&audit_dir));
        let summary = stdout_json(&res);
        let original = p_values(&path);
        assert_eq!(summary["draws"].as_u64().unwrap() as usize, original.len());
        assert_eq!(p_values(&audit_dir.join("trajectory.csv")), original, "{}", path.display());
        assert_eq!(
            fs::read_to_string(audit_dir.join("trajectory.csv")).unwrap(),
            fs::read_to_string(&path).unwrap()
        );
        replayed += 1;
    }
    assert_eq!(replayed, 3 * 2);

    // same seed, same rows
    let again = dir.path().join("again");
    run_ok(bin().args(["simulate", "--seed", "7", "--threads", "1", "--config"]).arg(&config).arg("--out").arg(&again));
    assert_eq!(fs::read(out.join("raw.csv")).unwrap(), fs::read(again.join("raw.csv")).unwrap());
}

fn audit_setup(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("setup.json");
    let setup = json!({
        "sizes": [100, 100],
        "method": { "strategy": "banded", "G": 10, "bets": { "rule": "agrapa", "c": 0.75 }, "selection": "round_robin" }
    });
    fs::write(&path, setup.to_string()).unwrap();
    path
}

#[test]
fn audit_reports_bad_rows() {
    let dir = tempfile::tempdir().unwrap();
    let setup = audit_setup(dir.path());
    let data = dir.path().join("draws.csv");
    fs::write(&data, "t,stratum,value\n1,2,0.9\n2,1,0.8\n3,3,0.5\n").unwrap();
    let out = bin().arg("audit").arg("--config").arg(&setup).arg("--data").arg(&data).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('3'), "{err}");
    assert!(err.contains("stratum"), "{err}");

    fs::write(&data, "t,stratum,value\n1,2,0.9\n2,1,1.5\n").unwrap();
    let out = bin().arg("audit").arg("--config").arg(&setup).arg("--data").arg(&data).output().unwrap();
    assert!(!out.status.success());

    fs::write(&data, "t,stratum,value\n2,2,0.9\n1,1,0.5\n").unwrap();
    let out = bin().arg("audit").arg("--config").arg(&setup).arg("--data").arg(&data).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}

#[test]
fn audit_of_no_draws_keeps_p_at_one() {
    let dir = tempfile::tempdir().unwrap();
    let setup = audit_setup(dir.path());
    let data = dir.path().join("draws.csv");
    fs::write(&data, "t,stratum,value\n").unwrap();
    let summary = stdout_json(&run_ok(bin().arg("audit").arg("--config").arg(&setup).arg("--data").arg(&data)));
    assert_eq!(summary["draws"], 0);
    assert_eq!(summary["p_value"], 1.0);
    assert_eq!(summary["rejected"], false);
}

#[test]
fn audit_of_high_values_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let setup = audit_setup(dir.path());
    let data = dir.path().join("draws.csv");
    let mut text = String::from("t,stratum,value\n");
    for t in 1..=60 {
        let k = 1 + t % 2;
        text.push_str(&format!("{t},{k},1\n"));
    }
    fs::write(&data, text).unwrap();
    let summary = stdout_json(&run_ok(bin().arg("audit").arg("--config").arg(&setup).arg("--data").arg(&data)));
    assert_eq!(summary["rejected"], true);
    assert!(summary["p_value"].as_f64().unwrap() <= 0.05);
    assert!(summary["tau"].as_u64().unwrap() <= 60);
}

#[test]
fn oracle_prints_json() {
    let out = run_ok(bin().args(["oracle", "--mu1", "0.4", "--mu2", "0.8"]));
    let v = stdout_json(&out);
    let eta = v["eta_star"].as_f64().unwrap();
    assert!(eta > 0.0 && eta < 1.0);
    assert_eq!(v["optimal"]["eta_star"].as_f64().unwrap(), eta);
    assert!(v["optimal"]["tau"].as_u64().unwrap() >= 1);
    assert!(v["gain"]["ratio"].as_f64().unwrap() > 0.0);

    // a null population has no finite stopping time
    let v = stdout_json(&run_ok(bin().args(["oracle", "--mu1", "0.3", "--mu2", "0.6"])));
    assert!(v["optimal"].is_null());
    assert!(!v["notes"].as_array().unwrap().is_empty());
}

#[test]
fn reproduce_writes_level_rows() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin().args(["reproduce", "fig1", "--seed", "3", "--replicates", "20", "--out"]).arg(dir.path()));
    let text = fs::read_to_string(dir.path().join("fig1.csv")).unwrap();
    assert!(text.starts_with("n_per_stratum,t_test_level,sequential_level"));
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn bad_invocations_fail() {
    assert!(!bin().arg("--no-such-flag").output().unwrap().status.success());
    assert!(!bin().args(["reproduce", "table9", "--out", "x"]).output().unwrap().status.success());
    let out = bin().args(["simulate", "--config", "/nonexistent.json", "--out", "x"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent.json"));
}
