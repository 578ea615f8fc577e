use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cages(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cages"))
        .args(args)
        .env("CAGES_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn small_run(out: &Path, method: &str, seed: &str) -> Output {
    cages(&[
        "run",
        "--problem",
        "quad-dup",
        "--method",
        method,
        "--budget",
        "80",
        "--init-budget",
        "20",
        "--replicates",
        "2",
        "--seed",
        seed,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gibo");
    let o = small_run(&out, "gibo", "7");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["config.json", "run_000.jsonl", "run_001.jsonl", "summary.json", "aggregate.csv"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let csv = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("cost,mean,stderr,rep0,rep1"));
    assert_eq!(lines.count(), 101);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("gibo on quad-dup"), "{stdout}");
}

#[test]
fn every_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["cages", "gibo", "ars", "logei"] {
        let out = dir.path().join(method);
        let o = cages(&[
            "run", "--problem", "quad-bias", "--method", method, "--budget", "40", "--init-budget", "10",
            "--replicates", "1", "--batch", "1", "--step-size", "0.1", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(small_run(&a, "cages", "3").status.success());
    assert!(small_run(&b, "cages", "3").status.success());
    for name in ["config.json", "run_000.jsonl", "run_001.jsonl", "summary.json", "aggregate.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn export_regrids_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    assert!(small_run(&out, "gibo", "1").status.success());
    let csv = dir.path().join("nested/curve.csv");
    let o = cages(&["export", "--in", out.to_str().unwrap(), "--grid", "0:80:20", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let costs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(costs, ["0", "20", "40", "60", "80"]);

    // the last row agrees with the full-resolution aggregate
    let full = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(
        text.lines().last().unwrap().split_once(',').unwrap().1,
        full.lines().last().unwrap().split_once(',').unwrap().1
    );
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["run".into(), "--problem".into(), "sphere".into(), "--method".into(), "gibo".into(), "--out".into(), "x".into()],
        vec!["run".into(), "--problem".into(), "quad-dup".into(), "--method".into(), "gibo".into(), "--budget".into(), "-5".into(), "--out".into(), dir.path().join("neg").display().to_string()],
        vec!["export".into(), "--in".into(), dir.path().join("missing").display().to_string(), "--grid".into(), "0:10:1".into(), "--out".into(), dir.path().join("e.csv").display().to_string()],
        vec!["export".into(), "--in".into(), dir.path().display().to_string(), "--grid".into(), "0:10".into(), "--out".into(), dir.path().join("e.csv").display().to_string()],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = cages(&refs);
        assert!(!o.status.success(), "{args:?} succeeded");
        let stderr = String::from_utf8_lossy(&o.stderr);
        assert!(stderr.contains("error"), "{args:?}: {stderr}");
    }
}
