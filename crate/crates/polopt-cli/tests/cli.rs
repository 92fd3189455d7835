//! End-to-end checks of the binary: files written, determinism, and the
//! exit-code contract (0 ok, 1 property failure, 2 config error).

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};

static DIR_COUNTER: AtomicU64 = AtomicU64::new(0);

fn temp_dir(tag: &str) -> PathBuf {
    let n = DIR_COUNTER.fetch_add(1, Ordering::Relaxed);
    let dir = std::env::temp_dir().join(format!(
        "polopt-cli-test-{}-{tag}-{n}",
        std::process::id()
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn polopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn run_writes_files_and_is_deterministic() {
    let dir_a = temp_dir("run-a");
    let dir_b = temp_dir("run-b");
    let base = [
        "run",
        "--rewards",
        "1,0.5",
        "--rule",
        "npg-stoch",
        "--eta",
        "1",
        "--horizon",
        "1000",
        "--seed",
        "7",
    ];
    for dir in [&dir_a, &dir_b] {
        let mut args = base.to_vec();
        args.push("--out");
        args.push(dir.to_str().unwrap());
        let out = polopt(&args);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let csv_a = fs::read(dir_a.join("trajectory.csv")).unwrap();
    let csv_b = fs::read(dir_b.join("trajectory.csv")).unwrap();
    assert!(!csv_a.is_empty());
    assert_eq!(csv_a, csv_b, "same invocation must write identical bytes");
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["horizon"], 1000);
}

#[test]
fn missing_rewards_is_a_config_error() {
    let out = polopt(&["run", "--rule", "npg-stoch", "--eta", "1", "--horizon", "10"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rewards"));
}

#[test]
fn numerical_abort_is_exit_three() {
    // A learning rate this large overflows the very first logit update.
    let dir = temp_dir("abort");
    let out = polopt(&[
        "run",
        "--rewards",
        "1,0.5",
        "--rule",
        "npg-stoch",
        "--eta",
        "1e308",
        "--horizon",
        "10",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_rule_and_rewards_are_config_errors() {
    let out = polopt(&[
        "run", "--rewards", "1,0.5", "--rule", "warp-drive", "--eta", "1", "--horizon", "10",
    ]);
    assert_eq!(exit_code(&out), 2);

    let out = polopt(&[
        "run", "--rewards", "1,1.5", "--rule", "npg-stoch", "--eta", "1", "--horizon", "10",
    ]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn committal_rejects_bad_arm_and_is_deterministic() {
    let out = polopt(&[
        "committal",
        "--rewards",
        "1,0.5",
        "--rule",
        "npg-stoch",
        "--eta",
        "1",
        "--arm",
        "5",
        "--horizon",
        "500",
    ]);
    assert_eq!(exit_code(&out), 2);

    let dir_a = temp_dir("committal-a");
    let dir_b = temp_dir("committal-b");
    for dir in [&dir_a, &dir_b] {
        let out = polopt(&[
            "committal",
            "--rewards",
            "1,0.5",
            "--rule",
            "npg-stoch",
            "--eta",
            "1",
            "--arm",
            "1",
            "--horizon",
            "500",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        fs::read(dir_a.join("committal.csv")).unwrap(),
        fs::read(dir_b.join("committal.csv")).unwrap()
    );
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir_a.join("committal.json")).unwrap()).unwrap();
    assert_eq!(summary["estimate"]["classification"], "exponential");
}

#[test]
fn verify_exit_codes() {
    // Small suite to keep this quick; full sizes run in the acceptance gate.
    let out = polopt(&["verify", "--suites", "moments", "--seed", "5"]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("suite moments: pass"));

    // Negative control: a corrupted Hessian must flip the ns suite to FAIL.
    let out = polopt(&[
        "verify",
        "--suites",
        "ns",
        "--seed",
        "5",
        "--inject-hessian-defect",
    ]);
    assert_eq!(exit_code(&out), 1);

    // Empty selection is a config error.
    let out = polopt(&["verify", "--suites", ""]);
    assert_eq!(exit_code(&out), 2);

    let out = polopt(&["verify", "--suites", "bogus"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = temp_dir("config");
    let config_path = dir.join("config.json");
    fs::write(
        &config_path,
        r#"{
            "version": 1,
            "seed": 3,
            "rewards": [1.0, 0.5],
            "rule": {"kind": "npg-stoch", "eta": 1.0},
            "horizon": 200
        }"#,
    )
    .unwrap();
    let out = polopt(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 3);
    assert_eq!(summary["horizon"], 200);

    // Flag beats file.
    let out = polopt(&[
        "run",
        "--config",
        config_path.to_str().unwrap(),
        "--horizon",
        "50",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["horizon"], 50);

    // Unsupported version is rejected.
    fs::write(&config_path, r#"{"version": 99}"#).unwrap();
    let out = polopt(&["run", "--config", config_path.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn mdp_ops_and_errors() {
    let dir = temp_dir("mdp");
    let config_path = dir.join("mdp.json");
    fs::write(
        &config_path,
        r#"{
            "version": 1,
            "mdp": {
                "P": [
                    [[0.8, 0.2], [0.3, 0.7]],
                    [[0.5, 0.5], [0.1, 0.9]]
                ],
                "r": [[0.9, 0.4], [0.2, 0.7]],
                "gamma": 0.9,
                "mu": [0.5, 0.5],
                "rho": [0.5, 0.5]
            }
        }"#,
    )
    .unwrap();
    let cfg = config_path.to_str().unwrap();
    let out_dir = dir.to_str().unwrap();

    let out = polopt(&["mdp", "--config", cfg, "--op", "identities", "--out", out_dir]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("mdp_identities.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);

    let out = polopt(&[
        "mdp", "--config", cfg, "--op", "failure-demo", "--horizon", "200", "--out", out_dir,
    ]);
    assert_eq!(exit_code(&out), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("mdp_failure.json")).unwrap()).unwrap();
    assert_eq!(report["committed"], true);

    // Unknown op and missing mdp object are config errors.
    let out = polopt(&["mdp", "--config", cfg, "--op", "nonsense"]);
    assert_eq!(exit_code(&out), 2);
    let out = polopt(&["mdp", "--op", "identities"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn env_var_sets_default_out_dir() {
    let dir = temp_dir("envdir");
    let out = Command::new(env!("CARGO_BIN_EXE_polopt"))
        .env("POLOPT_OUT_DIR", &dir)
        .args([
            "run", "--rewards", "1,0.5", "--rule", "staying", "--eta", "1", "--horizon", "10",
        ])
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("trajectory.csv").exists());
}

#[test]
fn table1_runs_small() {
    let dir = temp_dir("table1");
    let out = polopt(&[
        "table1",
        "--rewards",
        "1,0.8",
        "--trials",
        "100",
        "--seed",
        "1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.join("table1.json")).unwrap()).unwrap();
    assert_eq!(report["true_row"][0]["fit"]["model"], "inv-t");
    assert_eq!(report["true_row"][1]["fit"]["model"], "exp");
}
