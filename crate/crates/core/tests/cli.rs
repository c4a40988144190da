use std::path::Path;
use std::process::{Command, Output};

use optmark::harness;

fn optmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optmark")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_data(dir: &Path) -> String {
    let path = dir.join("data.csv");
    std::fs::write(&path, harness::synthetic_csv(80, 2)).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn bound_examples() {
    let out = optmark(&[
        "bound", "--alpha", "0.1", "--beta", "0.1", "--div", "kl", "--format", "json",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((v["bound"].as_f64().unwrap() - 1.757780).abs() < 1e-6);
    assert!((v["g1"].as_f64().unwrap() - 1.021651).abs() < 1e-6);

    let tv = optmark(&["bound", "--alpha", "0.3", "--beta", "0.3", "--div", "tv"]);
    assert_eq!(stdout(&tv).lines().nth(1).unwrap(), "0.3,0.3,tv,0.4,,");

    let bad = optmark(&["bound", "--alpha", "0.6", "--beta", "0.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("alpha <= 1 - beta"));
}

#[test]
fn compare_bounds_default_grid() {
    let out = optmark(&["compare-bounds"]);
    let text = stdout(&out);
    let mut rows = text.lines();
    assert_eq!(rows.next().unwrap(), "alpha,beta,g1,g2,margin");
    let mut n = 0;
    for row in rows {
        let margin: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!(margin > 0.0);
        n += 1;
    }
    assert_eq!(n, 81);
    assert!(text.contains("\n0.1,0.1,1.02165"));
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let missing = optmark(&["calibrate", "--data", "/nonexistent/x.csv"]);
    assert_eq!(missing.status.code(), Some(3));

    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "a,b\n1,2\n3\n").unwrap();
    let parse = optmark(&["calibrate", "--data", ragged.to_str().unwrap()]);
    assert_eq!(parse.status.code(), Some(3));

    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "state_id,score\n0,0.5\n").unwrap();
    let coverage = optmark(&["calibrate", "--data", &data, "--scores", scores.to_str().unwrap()]);
    assert_eq!(coverage.status.code(), Some(3));

    let undetectable = optmark(&["exact", "--data", &data, "--tau", "1.5", "--beta", "0.1"]);
    assert_eq!(undetectable.status.code(), Some(2));

    let rl = optmark(&["rl", "--data", &data, "--tau", "0.5", "--beta", "0"]);
    assert_eq!(rl.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&rl.stderr).contains("embed"));

    let budget = optmark(&[
        "embed",
        "--data",
        &data,
        "--tau",
        "0.5",
        "--beta",
        "0",
        "--n",
        "100",
        "--max-proposals",
        "3",
    ]);
    assert_eq!(budget.status.code(), Some(4));

    let stalled = optmark(&[
        "rl",
        "--data",
        &data,
        "--tau",
        "0.5",
        "--beta",
        "0.2",
        "--max-iters",
        "1",
    ]);
    assert_eq!(stalled.status.code(), Some(4));
    assert!(!stdout(&stalled).is_empty());
}

#[test]
fn embed_writes_samples_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let stats = dir.path().join("stats.json");
    let out = optmark(&[
        "embed",
        "--data",
        &data,
        "--key",
        "k",
        "--tau",
        "0.6",
        "--beta",
        "0.1",
        "--n",
        "50",
        "--seed",
        "4",
        "--stats-out",
        stats.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 51);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(stats).unwrap()).unwrap();
    assert_eq!(v["acceptances"], 50);
    assert!(v["proposals"].as_u64().unwrap() >= 50);
}

#[test]
fn rl_reports_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let out = optmark(&[
        "rl", "--data", &data, "--tau", "0.6", "--beta", "0.2", "--format", "json",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(v["kl_to_optimum"].as_f64().unwrap() <= 1e-6);
    let gap = v["report"]["final_objective"].as_f64().unwrap() - v["optimal_objective"].as_f64().unwrap();
    assert!(gap.abs() <= 1e-6);
    assert_eq!(v["report"]["config"]["step"], "natural");
}

#[test]
fn sweep_csv_carries_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path());
    let out = optmark(&["sweep", "--data", &data, "--dedupe", "--betas", "0.1,0.7"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("# dedupe: true\n"));
    assert!(text.contains("# betas: 0.1 0.7\n"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().any(|r| r.contains(",false,")));
}
