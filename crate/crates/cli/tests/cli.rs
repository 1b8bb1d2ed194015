use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tvem(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tvem"))
        .args(args)
        .current_dir(cwd)
        .env("TVEM_THREADS", "2")
        .output()
        .expect("spawn tvem")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn generate_grid(dir: &Path) {
    let out = tvem(
        &["generate", "--gen-c", "4", "--gen-n", "30", "--gen-seed", "3", "--out", "pts.csv"],
        dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fit_writes_trace_and_model() {
    let dir = tempfile::tempdir().unwrap();
    generate_grid(dir.path());
    let out = tvem(
        &[
            "fit", "--data", "pts.csv", "--algorithm", "kmeans_cprime", "--c", "4", "--c-prime", "2",
            "--seed", "1", "--out", "fit",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let trace = std::fs::read_to_string(dir.path().join("fit/trace.jsonl")).unwrap();
    let records: Vec<Value> = trace.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records[0]["iter"], 0);
    for key in ["J", "F", "L", "gap", "sigma2", "n_changed", "events"] {
        assert!(records[0].get(key).is_some(), "missing {key}");
    }
    let fs: Vec<f64> = records.iter().map(|r| r["F"].as_f64().unwrap()).collect();
    assert!(fs.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));

    let model = json(&dir.path().join("fit/model.json"));
    assert_eq!(model["model"]["kind"], "iso");
    assert_eq!(model["model"]["means"].as_array().unwrap().len(), 4);
    assert_eq!(model["iterations"].as_u64().unwrap() as usize, records.len() - 1);
    assert_eq!(model["final"], records[records.len() - 1]);
}

#[test]
fn fit_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    generate_grid(dir.path());
    for o in ["a", "b"] {
        let out = tvem(
            &["fit", "--data", "pts.csv", "--algorithm", "kmeans", "--c", "4", "--seed", "9", "--out", o],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a/trace.jsonl")).unwrap();
    let b = std::fs::read(dir.path().join("b/trace.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn audit_reports_consistent_gap() {
    let dir = tempfile::tempdir().unwrap();
    generate_grid(dir.path());
    let fit = tvem(
        &["fit", "--data", "pts.csv", "--algorithm", "kmeans", "--c", "4", "--out", "fit"],
        dir.path(),
    );
    assert!(fit.status.success());
    let out = tvem(
        &["audit", "--data", "pts.csv", "--model", "fit/model.json", "--out", "audit.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("audit.json"));
    let (f, l, gap) = (r["F"].as_f64().unwrap(), r["L"].as_f64().unwrap(), r["gap"].as_f64().unwrap());
    assert!(gap >= -1e-10);
    assert!((l - f - gap).abs() < 1e-12);
    assert!((r["kl_gap"].as_f64().unwrap() - gap).abs() < 1e-10);
    assert_eq!(r["n"], 120);
    assert_eq!(r["c"], 4);
    // the fitted kmeans model is at a fixpoint, so the audit sees the same F
    let model = json(&dir.path().join("fit/model.json"));
    assert!((model["final"]["F"].as_f64().unwrap() - f).abs() < 1e-12 * f.abs());
}

#[test]
fn experiment_from_flags_and_from_config_agree() {
    let dir = tempfile::tempdir().unwrap();
    let flags = tvem(
        &[
            "experiment", "--gen-kind", "uniform", "--gen-c", "3", "--gen-n", "20", "--gen-seed", "4",
            "--algorithm", "em_gmm", "--c", "3", "--restarts", "2", "--out", "flags",
        ],
        dir.path(),
    );
    assert!(flags.status.success(), "{}", String::from_utf8_lossy(&flags.stderr));
    let summary = json(&dir.path().join("flags/summary.json"));
    assert!(dir.path().join("flags/trace_restart_000.jsonl").exists());
    assert!(dir.path().join("flags/trace_restart_001.jsonl").exists());
    assert_eq!(summary["restarts"].as_array().unwrap().len(), 2);
    for key in ["per_iter_mean_F", "per_iter_mean_L", "best_run", "final_means", "config_echo"] {
        assert!(summary.get(key).is_some(), "missing {key}");
    }

    // the echoed config is itself a valid spec and reproduces the run
    let mut echo = summary["config_echo"].clone();
    echo["out_dir"] = Value::String("echo".into());
    std::fs::write(dir.path().join("spec.json"), echo.to_string()).unwrap();
    let cfg = tvem(&["experiment", "--config", "spec.json"], dir.path());
    assert!(cfg.status.success(), "{}", String::from_utf8_lossy(&cfg.stderr));
    let again = json(&dir.path().join("echo/summary.json"));
    assert_eq!(summary["per_iter_mean_F"], again["per_iter_mean_F"]);
    assert_eq!(summary["final_means"], again["final_means"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    generate_grid(dir.path());
    let code = |args: &[&str]| tvem(args, dir.path()).status.code();

    assert_eq!(
        code(&[
            "fit", "--data", "pts.csv", "--algorithm", "lazy_kmeans", "--c", "4", "--c-prime", "2",
            "--epsilon", "0.1", "--out", "g",
        ]),
        Some(2)
    );
    assert_eq!(code(&["fit", "--data", "pts.csv", "--algorithm", "kmeans_cprime", "--c", "4", "--out", "g"]), Some(2));
    assert_eq!(code(&["fit", "--algorithm", "kmeans", "--c", "2", "--gen-c", "3", "--out", "g"]), Some(2));
    assert_eq!(code(&["fit", "--data", "missing.csv", "--algorithm", "kmeans", "--c", "2", "--out", "g"]), Some(3));

    std::fs::write(dir.path().join("bad.csv"), "1.0,2.0\n3.0\n").unwrap();
    assert_eq!(code(&["fit", "--data", "bad.csv", "--algorithm", "kmeans", "--c", "1", "--out", "g"]), Some(3));

    std::fs::write(dir.path().join("spec.json"), r#"{"data":{"csv":"pts.csv"},"run":{"algorithm":"kmeans","c":2,"bogus":1},"out_dir":"x"}"#).unwrap();
    assert_eq!(code(&["experiment", "--config", "spec.json"]), Some(2));
}
