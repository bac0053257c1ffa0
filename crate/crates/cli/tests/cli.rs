use std::path::Path;
use std::process::{Command, Output};

fn fex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fex"))
        .args(args)
        .output()
        .expect("failed to launch fex")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const TINY: &str = r#"{
    "mode": "synthetic",
    "seed": 4,
    "synthetic": {"n_trajectories": 4, "steps": 30},
    "search": {"epochs": 2, "batch_size": 3, "pool_capacity": 2,
               "optim": {"t1_iters": 10, "t2_iters": 5, "t3_iters": 2}}
}"#;

#[test]
fn malformed_config_exits_with_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.json",
        r#"{"mode": "synthetic", "search": {"nu": 1.5}}"#,
    );
    let out = fex(&["search", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("search.nu"), "{err}");
}

#[test]
fn unknown_flag_exits_with_2() {
    assert_eq!(fex(&["search", "--bogus"]).status.code(), Some(2));
}

#[test]
fn missing_data_file_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "real.json",
        r#"{"mode": "real", "real": {"input": "nowhere.csv", "train_days": 5}}"#,
    );
    let out = fex(&["search", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.csv"));
}

#[test]
fn generate_writes_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let out_dir = dir.path().join("gen");
    let out = fex(&[
        "generate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(out_dir.join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("trajectory_id,step,S,I,R"));
    assert_eq!(lines.count(), 4 * 31);
}

#[test]
fn search_then_report_and_forecast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.json", TINY);
    let run = dir.path().join("run");
    let out = fex(&[
        "search",
        "--config",
        &cfg,
        "--out",
        run.to_str().unwrap(),
        "--epochs",
        "1",
    ]);
    let code = out.status.code();
    // a short search may learn a field whose rollout blows up; that is
    // reported as a numerical failure after the outputs are written
    assert!(matches!(code, Some(0) | Some(4)), "{out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with('d')).count(), 3);

    let results = run.join("results.json");
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(doc["config_echo"]["search"]["epochs"], 1);
    assert_eq!(doc["history"][0].as_array().unwrap().len(), 1);

    let report_dir = dir.path().join("report");
    let out = fex(&[
        "report",
        "--results",
        results.to_str().unwrap(),
        "--out",
        report_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let eqs = std::fs::read_to_string(report_dir.join("equations.txt")).unwrap();
    assert_eq!(
        eqs,
        std::fs::read_to_string(run.join("equations.txt")).unwrap()
    );
    assert_eq!(
        std::fs::read(report_dir.join("mse.csv")).unwrap(),
        std::fs::read(run.join("mse.csv")).unwrap()
    );

    let fc_dir = dir.path().join("fc");
    let out = fex(&[
        "forecast",
        "--results",
        results.to_str().unwrap(),
        "--out",
        fc_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), code);
    assert_eq!(
        std::fs::read(fc_dir.join("mse.csv")).unwrap(),
        std::fs::read(run.join("mse.csv")).unwrap()
    );
    if code == Some(0) {
        let fc = std::fs::read_to_string(fc_dir.join("forecast.csv")).unwrap();
        assert!(fc.starts_with("trajectory_id,step,S,I,R\n"));
    }
}

#[test]
fn corrupt_results_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "results.json", "{\"components\": 3}");
    let out = fex(&["report", "--results", &path]);
    assert_eq!(out.status.code(), Some(3));
}
