//! End-to-end runs of the `mlnc` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{
    "scenario": {"kind": "balanced", "k": 3, "n1": 6, "n2": 2},
    "ufm": {"d": 3, "restarts": 3, "replicas": 2, "lambda_w": 0.01, "lambda_h": 0.01, "seed": 5}
}"#;

const BLOCK: &str = r#"{
    "scenario": {"kind": "custom", "table": {"K": 4, "groups": [
        {"m": 2, "sets": [{"classes": [0, 1], "count": 5}, {"classes": [2, 3], "count": 5}]}
    ]}}
}"#;

fn mlnc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlnc"))
        .args(args)
        .current_dir(dir)
        .env_remove("OUTPUT_DIR")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn read(path: PathBuf) -> String {
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_is_deterministic_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "small.json", SMALL);
    let cfg = config.to_str().unwrap();
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let out = mlnc(&["run", "--config", cfg, "--out", name, "--format", "both"], dir.path());
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
        let files: Vec<String> = ["checkpoint.json", "bounds.json", "diagnostics.json", "summary.json"]
            .iter()
            .map(|f| read(dir.path().join(name).join(f)))
            .collect();
        texts.push(files);
    }
    assert_eq!(texts[0], texts[1]);

    let metrics = read(dir.path().join("a/metrics.csv"));
    assert!(metrics.starts_with("run_id,metric,value\n"));
    assert!(!metrics.contains('\r'));
    assert!(metrics.ends_with('\n'));
    assert!(metrics.lines().skip(1).all(|l| l.starts_with("seed5,") && l.split(',').count() == 3));
    let slack = read(dir.path().join("a/bounds_slack.csv"));
    assert!(slack.starts_with("m,c1,stage,slack,scale\n"));
    assert!(!slack.contains('\r'));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "small.json", SMALL);
    let cfg = config.to_str().unwrap();
    let out = mlnc(&["run", "--config", cfg, "--out", "s9", "--seed", "9", "--format", "json"], dir.path());
    assert_eq!(code(&out), 0);
    let checkpoint = read(dir.path().join("s9/checkpoint.json"));
    assert!(checkpoint.contains("\"seed\": 9"));
    assert!(!dir.path().join("s9/metrics.csv").exists());
}

#[test]
fn diagnose_reads_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(&dir, "small.json", SMALL);
    let out = mlnc(&["run", "--config", config.to_str().unwrap(), "--out", "run"], dir.path());
    assert_eq!(code(&out), 0);
    let out = mlnc(
        &["diagnose", "--checkpoint", "run/checkpoint.json", "--out", "diag", "--run-id", "r1", "--format", "csv"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let csv = read(dir.path().join("diag/metrics.csv"));
    assert!(csv.starts_with("run_id,metric,value\nr1,centering_residual,"));

    let out = mlnc(&["bounds", "--config", config.to_str().unwrap(), "--checkpoint", "run/checkpoint.json", "--out", "b"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(dir.path().join("b/bounds.json")).contains("best-found minimizer"));
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let with_env = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_mlnc"))
            .args(args)
            .current_dir(dir.path())
            .env("OUTPUT_DIR", "from_env")
            .output()
            .unwrap()
    };
    assert_eq!(code(&with_env(&["verify", "--trials", "5"])), 0);
    assert!(dir.path().join("from_env/verify.json").exists());
    assert_eq!(code(&with_env(&["verify", "--trials", "5", "--out", "from_flag"])), 0);
    assert!(dir.path().join("from_flag/verify.json").exists());
    assert_eq!(code(&mlnc(&["verify", "--trials", "5"], dir.path())), 0);
    assert!(dir.path().join("out/verify.json").exists());
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let ok = mlnc(&["verify", "--trials", "200", "--seed", "3", "--format", "both"], dir.path());
    assert_eq!(code(&ok), 0);
    let csv = read(dir.path().join("out/verify.csv"));
    assert!(csv.starts_with("property,trials,passed,worst_slack\n"));

    let faulty = mlnc(&["verify", "--trials", "200", "--inject-fault", "affine-sign"], dir.path());
    assert_eq!(code(&faulty), 3);
    let report = read(dir.path().join("out/verify.json"));
    assert!(report.contains("\"passed\": false"));

    assert_eq!(code(&mlnc(&["verify", "--trials", "0"], dir.path())), 1);
    assert_eq!(code(&mlnc(&["verify", "--bogus"], dir.path())), 1);
}

#[test]
fn config_and_degeneracy_errors() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write_config(&dir, "broken.json", "{\"scenario\": {\"kind\": \"balanced\", \"k\": 1, \"n1\": 3}}");
    let out = mlnc(&["spectrum", "--config", broken.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1);

    let missing = mlnc(&["run", "--config", "nope.json"], dir.path());
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.json"));

    let block = write_config(&dir, "block.json", BLOCK);
    let spectrum = mlnc(&["spectrum", "--config", block.to_str().unwrap()], dir.path());
    assert_eq!(code(&spectrum), 0);
    assert!(String::from_utf8_lossy(&spectrum.stdout).contains("degenerate (iii)"));
    let bounds = mlnc(&["bounds", "--config", block.to_str().unwrap()], dir.path());
    assert_eq!(code(&bounds), 3);
}

#[test]
fn non_convergence_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("\"seed\": 5", "\"seed\": 5, \"max_iters\": 3");
    let config = write_config(&dir, "short.json", &text);
    let out = mlnc(&["run", "--config", config.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 2);
    assert!(read(dir.path().join("out/bounds.json")).contains("non-converged state"));
}
