use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use longfuse::dataset::write_csv;
use longfuse::simulation::SimCase;

fn longfuse(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_longfuse"))
        .args(args)
        .current_dir(dir)
        .env_remove("LONGFUSE_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn fixture(dir: &Path) -> PathBuf {
    let data = SimCase::from_id(1).unwrap().generate(80, 200, 3).unwrap().data;
    let mut bytes = Vec::new();
    write_csv(&data, &mut bytes).unwrap();
    let path = dir.join("data.csv");
    std::fs::write(&path, bytes).unwrap();
    path
}

const SMALL_SIM: &[&str] = &["simulate", "--case", "1", "--n1", "60", "--n0", "150", "--reps", "12", "--oracle-n", "1000"];

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, flags) in [
        (
            "estimate",
            &[
                "--data", "--rct", "--obs", "--col-g", "--col-t", "--col-y", "--cols-s", "--cols-x", "--family",
                "--estimator", "--propensity-col", "--propensity-const", "--variance", "--bootstrap-b", "--seed",
                "--epsilon", "--encoding", "--selection", "--trim", "--alpha", "--out", "--json",
            ][..],
        ),
        (
            "simulate",
            &["--case", "--n1", "--n0", "--reps", "--seed", "--bootstrap-b", "--estimators", "--oracle-n", "--out", "--force"][..],
        ),
        ("replay", &["--out", "--check"][..]),
    ] {
        let o = longfuse(dir.path(), &[sub, "--help"]);
        assert_eq!(code(&o), 0);
        let text = String::from_utf8(o.stdout).unwrap();
        for f in flags {
            assert!(text.contains(f), "{sub} help lacks {f}");
        }
        assert!(text.contains("--threads"));
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let data = data.to_str().unwrap();
    let o = longfuse(dir.path(), &["simulate", "--case", "99", "--reps", "2"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("99"));

    let o = longfuse(dir.path(), &["estimate", "--data", data, "--estimator", "ipw-true"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--propensity-const"));

    let o = longfuse(dir.path(), &["estimate", "--data", data, "--alpha", "1.5"]);
    assert_eq!(code(&o), 2);

    let o = longfuse(dir.path(), &["estimate", "--data", "missing.csv"]);
    assert_eq!(code(&o), 2);

    let o = longfuse(dir.path(), &["simulate", "--case", "1", "--reps", "1000", "--bootstrap-b", "20000"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
}

#[test]
fn estimate_prints_json_for_every_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture(dir.path());
    let o = longfuse(
        dir.path(),
        &["estimate", "--data", data.to_str().unwrap(), "--propensity-const", "0.5", "--json", "--out", "est.json"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let written: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.json")).unwrap()).unwrap();
    assert_eq!(printed, written);
    let estimates = printed["estimates"].as_array().unwrap();
    assert_eq!(estimates.len(), 4);
    for e in estimates {
        let tau = e["tau_hat"].as_f64().unwrap();
        let ci = e["ci"].as_array().unwrap();
        assert!(ci[0].as_f64().unwrap() <= tau && tau <= ci[1].as_f64().unwrap());
    }
    assert!(dir.path().join("est.json.manifest.json").exists());
    // the recorded input hash guards replay
    let o = longfuse(dir.path(), &["replay", "est.json", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&data, "g,t,y\n").unwrap();
    let o = longfuse(dir.path(), &["replay", "est.json", "--check"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn simulate_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = longfuse(dir.path(), &[SMALL_SIM, &["--out", "a", "--threads", "1"]].concat());
    let b = longfuse(dir.path(), &[SMALL_SIM, &["--out", "b", "--threads", "3"]].concat());
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    // the embedded manifest names the output prefix, so compare past it
    let body = |s: String| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(body(read("a.csv")), body(read("b.csv")));
    assert!(read("a.manifest.json").contains("started"));
}

#[test]
fn replay_reproduces_and_detects_edits() {
    let dir = tempfile::tempdir().unwrap();
    let o = longfuse(dir.path(), &[SMALL_SIM, &["--out", "run"]].concat());
    assert_eq!(code(&o), 0);
    let o = longfuse(dir.path(), &["replay", "run.csv", "--check"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let o = longfuse(dir.path(), &["replay", "run.txt", "--out", "again"]);
    assert_eq!(code(&o), 0);
    for ext in ["csv", "txt"] {
        let a = std::fs::read(dir.path().join(format!("run.{ext}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("again.{ext}"))).unwrap();
        assert_eq!(a, b, "{ext}");
    }

    let mut text = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    text.push_str("tampered\n");
    std::fs::write(dir.path().join("run.csv"), text).unwrap();
    let o = longfuse(dir.path(), &["replay", "run.txt", "--check"]);
    assert_eq!(code(&o), 1);
}
