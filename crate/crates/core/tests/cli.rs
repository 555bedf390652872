use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seal_core::oracle::TabularMdp;

fn seal(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seal"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

const CHAIN2: &str = r#"{
    "seed": 5,
    "env": {"kind": "tabular", "preset": "chain2"},
    "data": {"trajectories": 100, "horizon": 10, "gamma": 0.5},
    "qlearn": {"model": {"backend": "tabular"}, "iterations": 40},
    "ratio": {"steps": 20},
    "advantage": {"model": {"backend": "tabular"}},
    "eval": {"fqe_iterations": 40, "mc_episodes": 100}
}"#;

fn workdir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CHAIN2).unwrap();
    dir
}

#[test]
fn generate_writes_one_line_per_trajectory() {
    let dir = workdir();
    let first = seal(
        &["--config", "cfg.json", "--out", "a", "generate"],
        dir.path(),
    );
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let text = fs::read_to_string(dir.path().join("a/data.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 100);

    let again = seal(
        &["--config", "cfg.json", "--out", "b", "generate"],
        dir.path(),
    );
    assert!(again.status.success());
    assert_eq!(
        fs::read(dir.path().join("a/data.jsonl")).unwrap(),
        fs::read(dir.path().join("b/data.jsonl")).unwrap()
    );

    let other = seal(
        &[
            "--config", "cfg.json", "--seed", "6", "--out", "c", "generate",
        ],
        dir.path(),
    );
    assert!(other.status.success());
    assert_ne!(
        text,
        fs::read_to_string(dir.path().join("c/data.jsonl")).unwrap()
    );
}

#[test]
fn staged_commands_chain_into_a_report() {
    let dir = workdir();
    for stage in [
        "generate",
        "train-q",
        "ratio",
        "pseudo",
        "fit-advantage",
        "evaluate",
    ] {
        let out = seal(&["--config", "cfg.json", "--out", "run", stage], dir.path());
        assert!(
            out.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(
            dir.path()
                .join(format!("run/manifest.{stage}.json"))
                .exists(),
            "{stage}"
        );
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/report.json")).unwrap())
            .unwrap();
    let seal_fqe = report["seal"]["fqe"].as_f64().unwrap();
    assert!((seal_fqe - 2.0).abs() < 1e-6, "{report}");
}

#[test]
fn missing_environment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = seal(&["generate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn bad_gamma_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"data": {"gamma": 1.5}}"#).unwrap();
    let out = seal(&["--config", "cfg.json", "generate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_prints_exact_tables() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("m.json"),
        serde_json::to_string(&TabularMdp::chain2()).unwrap(),
    )
    .unwrap();
    let out = seal(&["oracle", "--mdp", "m.json", "--gamma", "0.5"], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = &v["q_star"];
    assert!((q[0][1].as_f64().unwrap() - 2.0).abs() < 1e-10, "{v}");
    assert!(
        (v["tau"][1][0].as_f64().unwrap() - 1.0).abs() < 1e-10,
        "{v}"
    );
}
