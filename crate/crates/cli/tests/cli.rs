use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_warmstart-lab"))
}

fn core_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(core_data().join("experiments/e2e.json"))
        .arg("--output-dir")
        .arg(dir.path())
        .args(["--trials", "3", "--amp-condition", "3", "--hkma-mode", "scout"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let store = dir.path().join("results.jsonl");
    let text = std::fs::read_to_string(&store).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("{\"kind\":\"trial\"")).count(), 30);
    assert!(text.contains("\"method\":\"amp3\"") && text.contains("\"method\":\"hkma_scout\""));

    let out = bin().args(["report", "--store"]).arg(&store).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let md = std::fs::read_to_string(dir.path().join("report/report.md")).unwrap();
    assert!(md.contains("### toy_sphere") && md.contains("## Rank frequency by tier"));
}

#[test]
fn validate_data_reports_schema_and_rejects_garbage() {
    let out = bin().arg("validate-data").arg(core_data().join("datasets/toy_server.csv")).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("toy_server: 120 rows, 10 features, 2 objectives, tier medium"), "{stdout}");
    assert!(stdout.contains("feature compression symbolic"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = bin().arg("validate-data").arg(&bad).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn invalid_config_fails_before_any_trial() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(core_data().join("experiments/e2e.json"))
        .arg("--output-dir")
        .arg(dir.path())
        .args(["--trials", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials must be >= 1"));
    assert!(!dir.path().join("results.jsonl").exists());
}
