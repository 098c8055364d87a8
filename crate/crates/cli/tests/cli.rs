use std::path::Path;
use std::process::{Command, Output};

fn riesz_lab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riesz-lab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn dyadic_preset_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = riesz_lab(&["--preset", "dyadic-odometer"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = json(&dir.path().join("validate.json"));
    let messages = report["result"]["messages"].to_string();
    assert!(messages.contains("singular by bounded-cut criterion"), "{messages}");
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["exit_code"], 0);
    assert!(manifest["timestamp"].is_u64());
    let csv = std::fs::read_to_string(dir.path().join("validate.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
}

#[test]
fn greedy_on_degenerate_law_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = riesz_lab(&["greedy", "--preset", "degenerate-xi"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("section6"));
    assert_eq!(json(&dir.path().join("manifest.json"))["status"], "validation-rejected");
}

#[test]
fn oversized_tower_is_a_resource_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = riesz_lab(&["oracle-check", "--preset", "dyadic-odometer"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let out = riesz_lab(&["oracle-check", "--preset", "degenerate-xi"], dir.path());
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[params]\nstages = 3\ncuts = \"1\"\nspacing = \"0\"\nlaw = \"uniform\"\n").unwrap();
    let out = riesz_lab(&["validate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(&cfg, "[params]\nstages = 3\ncuts = \"k^2\"\n").unwrap();
    let out = riesz_lab(&["validate", "--config", cfg.to_str().unwrap()], &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn overrides_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = riesz_lab(
        &["section6", "--preset", "degenerate-xi", "--seed", "42", "--replicas", "8", "--grid", "4096"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["config"]["numeric"]["replicas"], 8);
    let report = json(&dir.path().join("section6.json"));
    assert_eq!(report["result"]["grid_size"], 4096);
    assert_eq!(report["result"]["f_term_holds"], true);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["kb-bound", "--preset", "degenerate-xi", "--replicas", "200"];
    riesz_lab(&args, dir.path());
    let first = std::fs::read(dir.path().join("kb-bound.json")).unwrap();
    riesz_lab(&args, dir.path());
    assert_eq!(first, std::fs::read(dir.path().join("kb-bound.json")).unwrap());
}
