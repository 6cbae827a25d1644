use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posefuzz_cli::commands::parse_pairs;
use posefuzz_cli::RunReport;
use posefuzz_core::runner::mock::{FaultKind, MockConfig, NoisyParams};

fn posefuzz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posefuzz")).args(args).output().expect("spawn posefuzz")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn mock_args(cfg: &MockConfig) -> Vec<String> {
    vec![env!("CARGO_BIN_EXE_posefuzz").into(), "mock".into(), cfg.to_json()]
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let path = dir.join("d.slmf");
    let mut args = vec!["synth", path.to_str().unwrap(), "--width", "48", "--height", "32"];
    args.extend_from_slice(extra);
    let out = posefuzz(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn run_with(dir: &Path, ds: &Path, mock: &MockConfig, extra: &[&str]) -> Output {
    let out_dir = dir.join("out");
    let mut args: Vec<String> =
        vec!["run".into(), "--dataset".into(), ds.display().to_string(), "--output-dir".into(), out_dir.display().to_string()];
    args.extend(extra.iter().map(|s| s.to_string()));
    args.push("--".into());
    args.extend(mock_args(mock));
    Command::new(env!("CARGO_BIN_EXE_posefuzz")).args(&args).output().unwrap()
}

fn csv_body(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn inspect_reports_counts_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "2"]);
    let out = posefuzz(&["inspect", ds.to_str().unwrap(), "--json"]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let total: u64 = doc["sensors"].as_array().unwrap().iter().map(|s| s["frames"].as_u64().unwrap()).sum();
    assert_eq!(total, 40);
}

#[test]
fn truncated_dataset_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "1"]);
    let bytes = std::fs::read(&ds).unwrap();
    std::fs::write(&ds, &bytes[..bytes.len() - 7]).unwrap();
    let out = posefuzz(&["inspect", ds.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_and_config_errors_exit_three() {
    assert_eq!(code(&posefuzz(&["run", "--no-such-flag"])), 3);
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.slmf");
    assert_eq!(code(&posefuzz(&["run", "--dataset", missing.to_str().unwrap(), "--", "true"])), 3);
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"dataset": "x.slmf", "unknown_key": 1}"#).unwrap();
    assert_eq!(code(&posefuzz(&["run", "--config", cfg.to_str().unwrap()])), 3);
    assert_eq!(code(&posefuzz(&["--version"])), 0);
}

#[test]
fn run_writes_tagged_outputs_and_reruns_from_them() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "4"]);
    let mock = MockConfig::noisy(NoisyParams { dataset: ds.clone(), ..NoisyParams::default() });
    let out = run_with(dir.path(), &ds, &mock, &["--seed", "9"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run_json = dir.path().join("out/run.json");
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(&run_json).unwrap()).unwrap();
    assert_eq!(report.seed, 9);
    assert_eq!(report.run.frames.len(), 40);
    let errors = std::fs::read_to_string(dir.path().join("out/errors.csv")).unwrap();
    assert!(errors.starts_with("# {"), "{errors}");
    let first = csv_body(&dir.path().join("out/errors.csv"));

    let again = dir.path().join("again");
    let out = posefuzz(&["run", "--config", run_json.to_str().unwrap(), "--output-dir", again.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_body(&again.join("errors.csv")), first);
}

#[test]
fn algorithm_failure_exits_one_unless_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "2"]);
    let mock = MockConfig::fault(FaultKind::Exit, 5);
    assert_eq!(code(&run_with(dir.path(), &ds, &mock, &[])), 1);
    assert_eq!(code(&run_with(dir.path(), &ds, &mock, &["--allow-failure"])), 0);
    let report: RunReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/run.json")).unwrap()).unwrap();
    assert!(report.failed);
    assert_eq!(report.run.frames.len(), 5);
}

#[test]
fn diagnose_finds_perturbation_induced_windows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "6"]);
    let cfg = dir.path().join("campaign.json");
    let mock = MockConfig::noisy(NoisyParams { dataset: ds.clone(), ..NoisyParams::default() });
    let campaign = serde_json::json!({
        "dataset": ds,
        "algorithm": mock_args(&mock),
        "perturbations": [{ "kind": "brightness", "delta": 200, "sensors": [0], "frame_ranges": [[40, 80]] }],
        "output_dir": "out",
        "seed": 3,
    });
    std::fs::write(&cfg, campaign.to_string()).unwrap();
    let out = posefuzz(&["run", "--config", cfg.to_str().unwrap(), "--allow-failure"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("out");
    let out = posefuzz(&["diagnose", "--output-dir", out_dir.to_str().unwrap(), "--window-frames", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("diagnosis.json")).unwrap()).unwrap();
    assert_eq!(diag["seed"], 3);
    assert!(!diag["windows"].as_array().unwrap().is_empty(), "{diag}");
    assert!(out_dir.join("window_rows.csv").exists());
    assert!(out_dir.join("correlation.csv").exists());
}

#[test]
fn fuzz_flags_replace_the_sweep_section() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "4"]);
    let out_dir = dir.path().join("sweep");
    let mut args: Vec<String> = ["fuzz", "--dataset", ds.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["--kind", "blur", "--values", "1,9", "--repetitions", "2", "--jobs", "1", "--"].map(String::from));
    args.extend(mock_args(&MockConfig::noisy(NoisyParams { dataset: ds.clone(), ..NoisyParams::default() })));
    let out = Command::new(env!("CARGO_BIN_EXE_posefuzz")).args(&args).output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    let values: Vec<i64> = doc["sweep"]["points"].as_array().unwrap().iter().map(|p| p["value"].as_i64().unwrap()).collect();
    assert_eq!(values, vec![1, 9]);
    assert_eq!(csv_body(&out_dir.join("sweep.csv")).lines().count(), 3);
}

#[test]
fn loopthresh_rejects_empty_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path(), &["--duration-s", "2"]);
    let pairs = dir.path().join("pairs.txt");
    std::fs::write(&pairs, "\n").unwrap();
    let out = posefuzz(&["loopthresh", "--dataset", ds.to_str().unwrap(), "--pairs", pairs.to_str().unwrap(), "--", "true"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pairs_parse_from_json_and_lines() {
    assert_eq!(parse_pairs("[[1, 2], [3, 4]]").unwrap(), vec![(1, 2), (3, 4)]);
    assert_eq!(parse_pairs("1 2\n# note\n3,4\n").unwrap(), vec![(1, 2), (3, 4)]);
    assert!(parse_pairs("1 2 3").is_err());
}
