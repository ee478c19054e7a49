use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_fedkme");

fn concept_config(agents: usize, n_k: usize, dim: usize) -> String {
    format!(
        r#"seed = 5
output_dir = "unused"
methods = ["local", "grand_mean", "oracle", "qagg"]
targets = [0]

[experiment]
kind = "concept_shift"
sigma_c2_grid = [0.0, 0.5]
repetitions = 2
test_points = 50
agents = {agents}
n_k = {n_k}
dim = {dim}
sigma_y2 = 2.0

[protocol]
mode = "rff"
rff_dim = 40
scope = "full_tuple"

[protocol.kernel]
kind = "label_weighted"

[protocol.qagg]
preset = "log_b"
iterations = 1000
step_scale = 0.5

[protocol.model]
kind = "ridge"
lambda = 0.01
fit_intercept = true

[protocol.optimizer]
kind = "closed_form"
"#
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn fedkme(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn gen_writes_one_row_per_point_for_the_default_size() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &concept_config(100, 10, 20));
    let out = dir.path().join("data.csv");
    let result = fedkme(&["gen"], &config, &out);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("agent_id,x_1,") && header.ends_with(",x_20,y"));
    assert_eq!(lines.count(), 1000);
}

#[test]
fn gen_single_point() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &concept_config(1, 1, 3));
    // an existing directory receives data.csv
    let result = fedkme(&["gen"], &config, dir.path());
    assert!(result.status.success());
    let text = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn unwritable_output_is_a_runtime_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &concept_config(3, 5, 2));
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("data.csv");
    let result = fedkme(&["gen"], &config, &out);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("blocker"), "{stderr}");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    let result = fedkme(&["run"], &missing, dir.path());
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("missing.toml"));

    let bad = write_config(dir.path(), "seed = \"nope\"\n");
    assert_eq!(fedkme(&["run"], &bad, dir.path()).status.code(), Some(1));

    let usage = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let help = Command::new(BIN).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn run_writes_all_outputs_and_seed_override_changes_them() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &concept_config(6, 10, 3));
    let a = dir.path().join("a");
    let result = fedkme(&["run"], &config, &a);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let results = fs::read_to_string(a.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4 * 2 * 2);
    assert!(a.join("weights.csv").exists() && a.join("comm.csv").exists());

    let b = dir.path().join("b");
    let result = fedkme(&["run", "--seed", "6"], &config, &b);
    assert!(result.status.success());
    assert_ne!(results, fs::read_to_string(b.join("results.csv")).unwrap());
}

#[test]
fn weights_and_baseline_write_their_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &concept_config(6, 10, 3));
    let w = dir.path().join("w");
    assert!(fedkme(&["weights"], &config, &w).status.success());
    assert!(w.join("weights.csv").exists());
    assert!(!w.join("results.csv").exists());

    let b = dir.path().join("b");
    assert!(fedkme(&["baseline"], &config, &b).status.success());
    let results = fs::read_to_string(b.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3 * 2 * 2);
    assert!(!results.contains("qagg"));
    assert!(!b.join("weights.csv").exists());
}
