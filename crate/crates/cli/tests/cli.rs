//! End-to-end checks of the command-line interface and its exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvcl"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mvcl_cli_tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn classify_prints_tail_regimes() {
    let out = bin().args(["classify", "arctan"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("H6"), "{text}");

    let out = bin()
        .args(["classify", "exp_sin", "--json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["pos"]["regime"], "H5");
}

#[test]
fn unknown_flux_is_a_config_error() {
    let out = bin().args(["classify", "nosuch"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_and_suite_exit_codes() {
    let cfg = tmp("mini.toml");
    std::fs::write(
        &cfg,
        r#"
name = "mini"
[flux]
spec = "sin"
[initial]
window = [-1.0, 1.0]
atoms = [{ x = 0.0, mass = 0.5 }]
[run]
t_max = 0.35
n_cells = [100, 200]
surrogate_multipliers = [20.0, 40.0]
tol_conv = 0.3
[checks]
compatibility_tol = 0.3
"#,
    )
    .unwrap();
    let outdir = tmp("mini_out");
    let out = bin()
        .args([
            "run",
            cfg.to_str().unwrap(),
            "--out",
            outdir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert!(outdir.join("mini/verdict.json").exists());

    let bad = tmp("bad.toml");
    std::fs::write(&bad, "nonsense = true\n").unwrap();
    let out = bin().args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // A directory holding one failing synthetic scenario: nonzero exit.
    let dir = tmp("adv_suite");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(
        dir.join("reversed.toml"),
        r#"
name = "reversed"
kind = "adversarial"
[flux]
spec = "sin"
[initial]
window = [-1.0, 2.0]
[run]
t_max = 1.0
"#,
    )
    .unwrap();
    let out = bin()
        .args([
            "suite",
            dir.to_str().unwrap(),
            "--out",
            tmp("adv_suite_out").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_runs_a_parameter_grid() {
    let cfg = tmp("sweep_base.toml");
    std::fs::write(
        &cfg,
        r#"
name = "sweepmini"
[flux]
spec = "sin"
[initial]
window = [-1.0, 1.0]
atoms = [{ x = 0.0, mass = 0.5 }]
[run]
t_max = 0.35
n_cells = [100, 200]
surrogate_multipliers = [20.0, 40.0]
tol_conv = 0.3
[checks]
compatibility_tol = 0.3
"#,
    )
    .unwrap();
    let outdir = tmp("sweep_out");
    let out = bin()
        .args([
            "sweep",
            cfg.to_str().unwrap(),
            "--param",
            "initial.atoms.0.mass=0.4,0.6",
            "--out",
            outdir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outdir.join("sweep_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["results"].as_array().unwrap().len(), 2);
    assert_eq!(report["all_pass"], true);
}
