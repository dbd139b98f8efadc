use std::fs;
use std::path::Path;

use lantest::cli::{main_with_args, read_csv, RunManifest};
use lantest::mc::{aggregate_power, PowerRow, ReplicateRecord};

fn run(args: &[&str]) -> i32 {
    let mut all = vec!["lantest"];
    all.extend_from_slice(args);
    main_with_args(all)
}

fn quick(out: &Path) -> Vec<String> {
    [
        "power",
        "--n-list",
        "60,200",
        "--a-grid",
        "0.3,0.8",
        "--replicates",
        "150",
        "--policies",
        "true-param,lse,mde",
        "--n-aux",
        "20000",
        "--seed",
        "17",
        "--out-dir",
        out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_owned(args: &[String]) -> i32 {
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run(&refs)
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    assert_eq!(run(&["power", "--rho", "1.5", "--out-dir", out]), 2);
    assert_eq!(run(&["power", "--preset", "nope", "--out-dir", out]), 2);
    assert_eq!(run(&["size", "--alpha", "1.5", "--out-dir", out]), 2);
    assert_eq!(run(&["power", "--model", "ar7", "--out-dir", out]), 2);
    assert_eq!(run(&["power", "--policies", "oracle", "--out-dir", out]), 2);
    assert_eq!(run(&["frobnicate"]), 2);

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[model]\nkind = \"ar1\"\nsurprise = 3\n").unwrap();
    assert_eq!(run(&["power", "--config", bad.to_str().unwrap(), "--out-dir", out]), 2);
    fs::write(&bad, "[experiment\n").unwrap();
    assert_eq!(run(&["power", "--config", bad.to_str().unwrap(), "--out-dir", out]), 2);
    assert!(!Path::new(out).exists());
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("taken");
    fs::write(&file, "x").unwrap();
    assert_eq!(run(&["score-audit", "--out-dir", file.to_str().unwrap()]), 3);
}

#[test]
fn power_runs_are_reproducible_and_reaggregate() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run_owned(&quick(&a)), 0);
    let mut threaded = quick(&b);
    threaded.extend(["--threads".to_string(), "2".to_string()]);
    assert_eq!(run_owned(&threaded), 0);
    for f in ["power.csv", "records.csv", "config.toml", "auxiliary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "power");
    assert_eq!(manifest.seed, 17);
    assert_eq!(manifest.config_hash.len(), 64);
    assert!(manifest.files.iter().any(|f| f == "records.csv"));

    let rows: Vec<PowerRow> = read_csv(&a.join("power.csv")).unwrap();
    let mut records: Vec<ReplicateRecord> = read_csv(&a.join("records.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert_eq!(records.len(), 2 * 2 * 3 * 150);
    records.reverse();
    let again = aggregate_power(&records, 0.05, &manifest.config_hash, 17);
    assert_eq!(again, rows);

    // the written config reproduces the run
    let c = dir.path().join("c");
    let code = run(&[
        "power",
        "--config",
        a.join("config.toml").to_str().unwrap(),
        "--out-dir",
        c.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(fs::read(a.join("power.csv")).unwrap(), fs::read(c.join("power.csv")).unwrap());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[experiment]\nn_list = [80]\nreplicates = 7\na_grid = [0.5]\n[estimation]\nn_aux = 5000\n",
    )
    .unwrap();
    let out = dir.path().join("o");
    let code = run(&[
        "size",
        "--config",
        cfg.to_str().unwrap(),
        "--replicates",
        "9",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let records: Vec<ReplicateRecord> = read_csv(&out.join("records.csv")).unwrap();
    assert_eq!(records.len(), 9);
    assert!(records.iter().all(|r| r.n == 80));
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    assert!(written.contains("replicates = 9"));
}

#[test]
fn simulate_writes_a_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let code = run(&[
        "simulate",
        "--preset",
        "paper-ex3",
        "--regime",
        "alternative",
        "--a",
        "0.4",
        "--n",
        "50",
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let text = fs::read_to_string(out.join("path.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,y,eps"));
    assert_eq!(lines.count(), 50);
    assert_eq!(run(&["simulate", "--regime", "sideways", "--out-dir", out.to_str().unwrap()]), 2);
}

#[test]
fn assert_mode_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(run(&["score-audit", "--noise", "student", "--dof", "5", "--assert", "--out-dir", out]), 0);
    let base = [
        "size", "--n-list", "300", "--replicates", "400", "--a-grid", "0", "--n-aux", "20000", "--assert", "--out-dir", out,
    ];
    assert_eq!(run(&base), 0);
    let power = [
        "power", "--n-list", "300", "--replicates", "400", "--a-grid", "0.5", "--n-aux", "20000", "--assert", "--out-dir", out,
    ];
    assert_eq!(run(&power), 0);
    // tau is about 2 here, where the tau-squared formula overstates power
    let mut paper = power.to_vec();
    paper.extend(["--power-convention", "paper"]);
    assert_eq!(run(&paper), 4);
}

#[test]
fn diagnostics_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = out.to_str().unwrap();
    let common = ["--n-list", "200,800", "--replicates", "60", "--n-aux", "20000", "--out-dir", o];
    let mut lan = vec!["lan-check"];
    lan.extend(common);
    assert_eq!(run(&lan), 0);
    let mut est = vec!["estimator-check", "--preset", "paper-ex2", "--a-grid", "0.5"];
    est.extend(common);
    assert_eq!(run(&est), 0);
    for f in ["lan.csv", "lan_records.csv", "estimator.csv", "estimator_records.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}
