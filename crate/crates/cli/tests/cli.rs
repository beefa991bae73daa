//! Command-line contract: exit codes, report artifacts, catalog output.

use std::path::Path;
use std::process::{Command, Output};

fn sojourn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sojourn"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const QUICK_IDENTITIES: &str = r#"
schema_version = 1
suite = "identities"
seed = 3

[grid]
dimension = 1
points = 512
spacing = 1.0

[model]
kind = "shift"
velocity = [1.0]

[state]
center = [0.0]
window = [[0.3, 1.5]]
profile_width = 0.3

[localisation]
width = 0.3

[delay]
r_list = [32.0, 64.0, 128.0]

[tolerances]
tol_w = 1e-9
v_min = 0.2
"#;

#[test]
fn catalog_is_stable_and_anchored() {
    let a = sojourn(&["list-suites"]);
    let b = sojourn(&["list-suites"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.contains("summation_formula → Theorem thm_summation"));
    assert!(text.contains("mourre_bound → Lemma lemma_Mourre"));
    assert!(text.contains("identities → "));
    assert!(text.contains("delay → "));
}

#[test]
fn missing_config_is_a_config_error() {
    let out = sojourn(&["run", "/nonexistent/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_toml_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "this is not = [valid");
    let out = sojourn(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{QUICK_IDENTITIES}\n[mystery]\nknob = 1\n"),
    );
    let out = sojourn(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn short_radius_ladder_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &QUICK_IDENTITIES.replace("r_list = [32.0, 64.0, 128.0]", "r_list = [32.0, 64.0]"),
    );
    let out = sojourn(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("r_list"), "stderr: {err}");
}

#[test]
fn unsupported_schema_version_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &QUICK_IDENTITIES.replace("schema_version = 1", "schema_version = 99"),
    );
    let out = sojourn(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_suite_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK_IDENTITIES);
    let out = sojourn(&["run", &cfg, "--suite", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn passing_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK_IDENTITIES);
    let out_dir = dir.path().join("out");
    let out = sojourn(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}",
        String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "suite,model,r,quantity,value,tail,verdict");
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")));

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["suites"][0]["pass"], true);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["threads"], 1);
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn failing_run_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    // an unattainable residual bound makes the suite fail but not error
    let cfg = write_config(
        dir.path(),
        &format!("{QUICK_IDENTITIES}transport = 1e-18\n"),
    );
    let out_dir = dir.path().join("out");
    let out = sojourn(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let csv = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(csv.contains(",fail"), "report should record the failure");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), QUICK_IDENTITIES);
    let out_dir = dir.path().join("out");
    let out = sojourn(&[
        "run", &cfg, "--out", out_dir.to_str().unwrap(), "--seed", "42",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 42);
}
