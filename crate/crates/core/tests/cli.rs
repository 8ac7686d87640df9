use std::path::Path;
use std::process::{Command, Output};

use genqvi::hard::closed_form_qstar;
use tempfile::TempDir;

fn qvi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qvi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

fn q_rows(csv: &str) -> Vec<(usize, usize, f64)> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn solve_hard_instance_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "hard.json");
    let out = qvi(&["hard-gen", "--k", "2", "--l", "3", "--gamma", "0.75", "--out", &file]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "hard.meta.json")).unwrap()).unwrap();
    let p = meta["p"].as_f64().unwrap();
    assert!((p - 2.0 / 2.25).abs() < 1e-15);

    let out = qvi(&["solve", "--mdp", &file]);
    assert!(out.status.success());
    let expected = closed_form_qstar(0.75, p).unwrap();
    let rows = q_rows(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), (2 + 2 * 2 * 3) * 3);
    for (x, _, q) in rows.iter().filter(|r| r.0 < 2) {
        assert!((q - expected).abs() <= 1e-12, "state {x}");
    }
}

#[test]
fn hard_gen_pair_writes_both_models() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "pair.json");
    let out = qvi(&["hard-gen", "--k", "1", "--l", "1", "--gamma", "0.9", "--epsilon", "0.01", "--out", &file]);
    assert!(out.status.success());
    assert!(Path::new(&path(&dir, "pair.m1.json")).exists());
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path(&dir, "pair.meta.json")).unwrap()).unwrap();
    let gap = meta["qstar1"].as_f64().unwrap() - meta["qstar0"].as_f64().unwrap();
    assert!(gap > 0.02);
    let inadmissible = qvi(&["hard-gen", "--k", "1", "--l", "1", "--gamma", "0.9", "--epsilon", "0.9", "--out", &file]);
    assert_eq!(inadmissible.status.code(), Some(1));
}

#[test]
fn zero_discount_returns_rewards() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "myopic.json");
    std::fs::write(
        &file,
        r#"{"num_states": 2, "num_actions": 2, "discount": 0.0,
            "reward": [0.25, 0.5, 1.0, 0.0],
            "transition": [[1, 0], [0, 1], [0.5, 0.5], [1, 0]]}"#,
    )
    .unwrap();
    let out = qvi(&["solve", "--mdp", &file]);
    assert!(out.status.success());
    let rows = q_rows(&String::from_utf8(out.stdout).unwrap());
    let q: Vec<f64> = rows.iter().map(|r| r.2).collect();
    assert_eq!(q, vec![0.25, 0.5, 1.0, 0.0]);
}

#[test]
fn malformed_row_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "bad.json");
    std::fs::write(
        &file,
        "{\"num_states\": 2, \"num_actions\": 1, \"discount\": 0.9,\n\"reward\": [0, 1],\n\"transition\": [\n[0.5, 0.6],\n[0, 1]]}\n",
    )
    .unwrap();
    let out = qvi(&["solve", "--mdp", &file]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(":4:"), "{err}");
}

#[test]
fn exit_codes() {
    assert_eq!(qvi(&["solve"]).status.code(), Some(1));
    assert_eq!(qvi(&["solve", "--mdp", "/nonexistent/x.json"]).status.code(), Some(2));
    assert_eq!(qvi(&["--help"]).status.code(), Some(0));
}

#[test]
fn qvi_run_and_variance_check() {
    let dir = TempDir::new().unwrap();
    let file = path(&dir, "h.json");
    assert!(qvi(&["hard-gen", "--k", "1", "--l", "1", "--gamma", "0.6", "--p", "0.5", "--out", &file]).status.success());
    let out = qvi(&["qvi-run", "--mdp", &file, "--n", "200", "--k", "30", "--seed", "4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("# n=200 k=30 seed=4 total_samples=600"), "{text}");
    let out = qvi(&["qvi-run", "--mdp", &file, "--n", "200"]);
    assert_eq!(out.status.code(), Some(1));

    let out = qvi(&["variance-check", "--mdp", &file, "--policy", "0,0,0", "--assert"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("holds=true").count(), 3);
    let out = qvi(&["variance-check", "--mdp", &file, "--policy", "0,3,0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn experiment_is_reproducible_and_asserts() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "cfg.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "pac-audit",
            "mdp": {"kind": "random", "num_states": 3, "num_actions": 2, "gamma": 0.5, "seed": 1},
            "epsilon": 0.2, "delta": 0.1, "seeds": 20, "master_seed": 9}"#,
    )
    .unwrap();
    let a = path(&dir, "a.csv");
    let b = path(&dir, "b.csv");
    assert!(qvi(&["experiment", "--config", &cfg, "--out", &a, "--assert"]).status.success());
    assert!(qvi(&["--jobs", "1", "experiment", "--config", &cfg, "--out", &b]).status.success());
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    assert!(text.starts_with("# experiment=pac-audit config_hash="));
    assert!(text.lines().nth(1) == Some("seed,error,epsilon,pass"));

    let other = qvi(&["experiment", "--config", &cfg, "--seed", "10"]);
    assert_ne!(String::from_utf8(other.stdout).unwrap(), text);
}

#[test]
fn failing_check_exits_with_three() {
    let dir = TempDir::new().unwrap();
    let cfg = path(&dir, "cfg.json");
    // deterministic rows: the error does not shrink with n, so the slope is 0
    std::fs::write(
        &cfg,
        r#"{"experiment": "scaling-n",
            "mdp": {"kind": "hard", "k": 1, "l": 1, "gamma": 0.5, "p": 1.0},
            "epsilon": 0.01, "n_grid": [10, 1000], "seeds": 3}"#,
    )
    .unwrap();
    let out = qvi(&["experiment", "--config", &cfg, "--assert"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
