use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sparsehe"));
    c.env_remove("SPARSEHE_OUT").env_remove("SPARSEHE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}

fn top_level_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

const FL_RUN: &str = r#"{
  "schema_version": 1,
  "seeds": [42, 43, 44, 45, 46],
  "experiment": { "kind": "fl_run", "config": { "n_clients": 5, "rounds": 3, "sparsity": 0.9 } }
}"#;

#[test]
fn fl_run_writes_five_trials_and_a_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(tmp.path(), "m.json", FL_RUN);
    let out = tmp.path().join("out");
    let o = run(&["run", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("desk_insecure"), "security tag missing: {}", stdout(&o));
    let dir = run_dir(&out);
    let files = top_level_files(&dir);
    assert_eq!(files.len(), 6, "{files:?}");
    assert!(files.contains(&"summary.json".to_string()));

    let summary: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    let hash = summary["manifest_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert!(dir.file_name().unwrap().to_str().unwrap().ends_with(&hash[..16]));
    assert_eq!(summary["seeds"], serde_json::json!([42, 43, 44, 45, 46]));
    assert_eq!(summary["final_accuracy"]["per_seed"].as_array().unwrap().len(), 5);
    assert!(summary["final_accuracy"]["std"].as_f64().unwrap() >= 0.0);

    for seed in 42..=46 {
        let t: Value = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("trial_seed{seed}.json"))).unwrap()).unwrap();
        assert_eq!(t["seed"], seed);
        assert_eq!(t["manifest_hash"], hash.as_str());
        assert_eq!(t["rounds"].as_array().unwrap().len(), 3);
        let csv = std::fs::read_to_string(dir.join(format!("rounds/seed{seed}.csv"))).unwrap();
        assert!(csv.starts_with(&format!("# manifest_hash={hash} seed={seed}\n")));
        assert_eq!(csv.lines().count(), 2 + 3);
    }

    // Re-running keeps every existing file untouched.
    let before = std::fs::metadata(dir.join("summary.json")).unwrap().modified().unwrap();
    let o = run(&["run", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("left unchanged"));
    assert_eq!(std::fs::metadata(dir.join("summary.json")).unwrap().modified().unwrap(), before);
}

#[test]
fn seed_override_and_env_out() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(tmp.path(), "m.json", FL_RUN);
    let out = tmp.path().join("env_out");
    let o = bin()
        .args(["run", "--manifest", m.to_str().unwrap(), "--seed-override", "7,8", "--threads", "2"])
        .env("SPARSEHE_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&out);
    assert_eq!(top_level_files(&dir), vec!["summary.json", "trial_seed7.json", "trial_seed8.json"]);
}

#[test]
fn config_errors_exit_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad_syntax = write(tmp.path(), "a.json", "{\n  \"schema_version\": 1,\n  \"seeds\": [1,\n}");
    let o = run(&["run", "--manifest", bad_syntax.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("line 4"), "{err}");

    let version = write(tmp.path(), "b.json", r#"{"schema_version": 2, "seeds": [1], "experiment": {"kind": "fl_run", "config": {}}}"#);
    assert_eq!(run(&["run", "--manifest", version.to_str().unwrap()]).status.code(), Some(2));

    let no_seeds = write(tmp.path(), "c.json", r#"{"schema_version": 1, "seeds": [], "experiment": {"kind": "mia", "config": {}}}"#);
    let o = run(&["run", "--manifest", no_seeds.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seeds"));

    let field = write(tmp.path(), "d.json", r#"{"schema_version": 1, "seeds": [1], "experiment": {"kind": "fl_run", "config": {"min_quorum": 9}}}"#);
    let o = run(&["run", "--manifest", field.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("min_quorum"));

    let wrong_kind = write(tmp.path(), "e.json", FL_RUN);
    assert_eq!(run(&["sweep", "--manifest", wrong_kind.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["run", "--manifest", "/nonexistent/m.json"]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn quorum_failure_every_round_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(
        tmp.path(),
        "m.json",
        r#"{"schema_version": 1, "seeds": [1], "experiment": {"kind": "fl_run", "config": {"rounds": 2, "dropout_probability": 1.0, "min_quorum": 1}}}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&["run", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "quorum_failure");
    // Reports are still written.
    assert!(run_dir(&out).join("summary.json").exists());
}

#[test]
fn accounting_reports_reference_figures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["account", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for needle in ["6695501", "= 13", "0.47 MB", "6.1 MB", "255.4 MB", "97.6%", "30.5 MB", "UNREPRODUCIBLE"] {
        assert!(text.contains(needle), "missing {needle}: {text}");
    }
    let j: Value = serde_json::from_str(&std::fs::read_to_string(run_dir(&out).join("accounting.json")).unwrap()).unwrap();
    assert_eq!(j["display"]["total_mb"], "30.5");
    assert_eq!(j["display"]["ciphertexts"], 13);
    assert_eq!(j["privacy"]["quoted_reproducible"], false);
    assert!(j["manifest_hash"].is_string());
    assert!(j.get("seed").is_some());
}

#[test]
fn sweep_emits_one_row_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(
        tmp.path(),
        "m.json",
        r#"{"schema_version": 1, "seeds": [42, 43], "experiment": {"kind": "sparsity_sweep", "config": {"base": {"rounds": 2}}}}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&["sweep", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = run_dir(&out);
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> =
        csv.lines().skip(2).map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[1][5] < w[0][5]), "analytic MB not strictly decreasing: {rows:?}");
    assert!(dir.join("plots/accuracy_vs_sparsity.svg").exists());
    let svg = std::fs::read_to_string(dir.join("plots/mb_vs_sparsity.svg")).unwrap();
    assert!(svg.starts_with("<!-- manifest_hash="));
}

#[test]
fn ablation_emits_one_row_per_configuration() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write(
        tmp.path(),
        "m.json",
        r#"{"schema_version": 1, "seeds": [42], "experiment": {"kind": "ablation", "config": {"base": {"rounds": 2}}}}"#,
    );
    let out = tmp.path().join("out");
    let o = run(&["run", "--manifest", m.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(run_dir(&out).join("ablation.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(
        names,
        ["full", "no_error_feedback", "no_adaptive_threshold", "no_packing", "no_encryption", "no_sparsification"]
    );
}

#[test]
fn converge_and_attack_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let conv = write(
        tmp.path(),
        "c.json",
        r#"{"schema_version": 1, "seeds": [1, 2], "experiment": {"kind": "convergence", "config": {"dim": 20, "steps": 500, "h_min": [0.1]}}}"#,
    );
    let o = run(&["converge", "--manifest", conv.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("slope"));
    let mia = write(
        tmp.path(),
        "m.json",
        r#"{"schema_version": 1, "seeds": [1], "experiment": {"kind": "mia", "config": {"fl": {"rounds": 2}, "overfit": {"epochs": 20}}}}"#,
    );
    let o = run(&["attack", "--manifest", mia.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("attack success"));
}

#[test]
fn ttest_on_summaries() {
    let tmp = tempfile::tempdir().unwrap();
    let a = write(tmp.path(), "a.json", r#"{"seeds": [1, 2, 3], "final_accuracy": {"per_seed": [0.8, 0.9, 0.85]}}"#);
    let b = write(tmp.path(), "b.json", r#"{"seeds": [1, 2, 4], "final_accuracy": {"per_seed": [0.8, 0.9, 0.85]}}"#);
    let o = run(&["ttest", a.to_str().unwrap(), a.to_str().unwrap()]);
    assert!(o.status.success());
    let line = stdout(&o).lines().last().unwrap().to_string();
    let j: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(j["test"]["p_value"], 1.0);
    assert_eq!(run(&["ttest", a.to_str().unwrap(), b.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn schema_subcommand_prints_json_schema() {
    let o = run(&["schema"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["properties"]["schema_version"]["const"], 1);
    assert_eq!(v["properties"]["experiment"]["oneOf"].as_array().unwrap().len(), 6);
}
