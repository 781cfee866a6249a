use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn updrs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_updrs"))
        .args(args)
        .env_remove("UPDRS_DATA")
        .output()
        .expect("spawn updrs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn surrogate(dir: &Path) -> PathBuf {
    let csv = dir.join("data.csv");
    let o = updrs(&["synth", "--records", "300", "--subjects", "5", "--output", csv.to_str().unwrap()]);
    assert!(o.status.success());
    csv
}

fn run_dir(o: &Output) -> PathBuf {
    let s = stdout(o);
    let line = s.lines().find_map(|l| l.strip_prefix("run directory: ")).expect("run directory line");
    PathBuf::from(line.trim())
}

#[test]
fn inspect_prints_counts_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = surrogate(dir.path());
    let o = updrs(&["--data", csv.to_str().unwrap(), "inspect"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.starts_with("300 records, 5 subjects"));
    for col in ["motor_UPDRS", "total_UPDRS", "PPE", "Shimmer:DDA"] {
        assert!(s.contains(col), "{col} missing");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "bogus = 1\n").unwrap();
    let o = updrs(&["--config", cfg.to_str().unwrap(), "inspect"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let missing = dir.path().join("missing.csv");
    assert_eq!(updrs(&["--data", missing.to_str().unwrap(), "inspect"]).status.code(), Some(2));
    // no data configured anywhere
    assert_eq!(updrs(&["inspect"]).status.code(), Some(2));
    assert_eq!(updrs(&["no-such-command"]).status.code(), Some(2));

    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "subject#,age\n1,x\n").unwrap();
    assert_eq!(updrs(&["--data", broken.to_str().unwrap(), "inspect"]).status.code(), Some(2));
}

#[test]
fn gradcheck_canary_fails_with_exit_1() {
    let ok = updrs(&["gradcheck", "--models", "2"]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(stdout(&ok).lines().any(|l| l == "PASS"));
    let bad = updrs(&["gradcheck", "--models", "2", "--canary"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(stdout(&bad).contains("FAIL"));
}

#[test]
fn select_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let csv = surrogate(dir.path());
    let out = dir.path().join("runs");
    let o = updrs(&["--data", csv.to_str().unwrap(), "--out", out.to_str().unwrap(), "select"]);
    assert_eq!(o.status.code(), Some(0));
    let run = run_dir(&o);
    assert!(run.starts_with(&out));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("rfe_report.json")).unwrap()).unwrap();
    assert!(json.is_object());
    let text = std::fs::read_to_string(run.join("rfe_report.txt")).unwrap();
    assert!(text.contains("selected (11)"));
    assert!(text.contains("motor_UPDRS"));
}

#[test]
fn train_eval_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let csv = surrogate(dir.path());
    let out = dir.path().join("runs");
    let args = [
        "--data",
        csv.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "train-eval",
        "--epochs",
        "2",
        "--folds",
        "2",
        "--max-rows",
        "150",
    ];
    let a = updrs(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let run = run_dir(&a);
    for f in ["report.json", "summary.csv", "mse_table.txt", "r2_table.txt", "config.toml"] {
        assert!(run.join(f).is_file(), "{f} missing");
    }
    assert!(run.file_name().unwrap().to_str().unwrap().ends_with("-seed3"));
    let s = stdout(&a);
    assert!(s.contains("LSTM-Attention") && s.contains("Ridge Regressions"));

    // a second run gets its own directory and the same report
    let b = updrs(&args);
    let run_b = run_dir(&b);
    assert_ne!(run, run_b);
    assert_eq!(std::fs::read(run.join("report.json")).unwrap(), std::fs::read(run_b.join("report.json")).unwrap());

    // the saved config reproduces the run
    let again = updrs(&["--config", run.join("config.toml").to_str().unwrap(), "train-eval"]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        std::fs::read(run.join("report.json")).unwrap(),
        std::fs::read(run_dir(&again).join("report.json")).unwrap()
    );
}
