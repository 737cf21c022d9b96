use gp3_cli::RunConfig;
use std::process::Command;

fn gp3() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gp3"))
}

#[test]
fn default_config_round_trips() {
    let out = gp3().arg("default-config").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(RunConfig::from_str(&text).unwrap(), RunConfig::default());
}

#[test]
fn validate_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = gp3()
        .args(["validate", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("validate.json")).unwrap())
            .unwrap();
    assert_eq!(doc["status"], "ok");
    assert_eq!(doc["certification"]["passed"], true);
    assert!(doc["provenance"]["content_hash"].is_string());
}

#[test]
fn a_violated_invariant_exits_nonzero_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(
        &cfg,
        "[potential]\nprofile = product_bump\nsymmetrize = false\n",
    )
    .unwrap();
    let out = gp3()
        .args(["validate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert_eq!(err["invariant"], "invalid_potential");
    assert_eq!(err["subcommand"], "validate");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("typo.ini");
    std::fs::write(&cfg, "[grids]\nn_6 = 12\n").unwrap();
    let out = gp3()
        .args(["validate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["invariant"], "valid_input");
}

#[test]
fn memory_budget_is_enforced_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.ini");
    std::fs::write(&cfg, "[grids]\nn9 = 8\n").unwrap();
    let out = gp3()
        .args(["sigma", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["invariant"], "memory_budget");
}
