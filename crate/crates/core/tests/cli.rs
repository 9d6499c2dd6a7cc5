mod common;

use std::fs;
use std::process::Command;

use common::{lrjd, scratch_dir, summary_value};
use lrjd::problems::laplacian_min_eigenvalue;

fn write(dir: &std::path::Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_laplacian_matches_analytic_eigenvalue() {
    let dir = scratch_dir("solve");
    let cfg = write(
        &dir,
        "lap.cfg",
        "problem.kind = laplacian\nproblem.n = 32\nsolver.rank = 1\nsolver.max_outer = 25\n\
         solver.outer_tol = 1e-11\nsolver.early_shift = 0\nsolver.seed = 1\n\
         output.trace = out/trace.csv\noutput.summary = out/summary.txt\n",
    );
    let out = lrjd(&["solve", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("out/summary.txt")).unwrap();
    let theta: f64 = summary_value(&summary, "theta").parse().unwrap();
    assert!((theta - laplacian_min_eigenvalue(32, 32)).abs() <= 1e-10);
    assert_eq!(summary_value(&summary, "converged"), "true");
    let trace = fs::read_to_string(dir.join("out/trace.csv")).unwrap();
    assert!(trace.starts_with("iter,theta,resid,inner_iters,basis,alpha,time_s\n"));
}

#[test]
fn truncated_run_still_succeeds() {
    let dir = scratch_dir("truncated");
    let cfg = write(
        &dir,
        "one.cfg",
        "problem.n = 20\nsolver.rank = 2\nsolver.max_outer = 1\noutput.summary = s.txt\n",
    );
    let out = lrjd(&["solve", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let summary = fs::read_to_string(dir.join("s.txt")).unwrap();
    assert_eq!(summary_value(&summary, "converged"), "false");
    assert_eq!(summary_value(&summary, "stagnated"), "false");
    assert_eq!(summary_value(&summary, "iterations"), "1");
}

#[test]
fn malformed_config_exits_with_line_number() {
    let dir = scratch_dir("malformed");
    for (text, line) in [
        ("problem.n = 20\nsolver.rank = -3\n", "line 2"),
        ("problem.n = 20\nthis is not a pair\n", "line 2"),
        ("solver.method = lanczos\n", "line 1"),
    ] {
        let cfg = write(&dir, "bad.cfg", text);
        let out = lrjd(&["solve", &cfg]);
        assert_eq!(out.status.code(), Some(1), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(line), "{text}: {err}");
    }
    let missing = dir.join("absent.cfg");
    assert_eq!(lrjd(&["solve", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn compare_writes_per_variant_and_merged_traces() {
    let dir = scratch_dir("compare");
    let cfg = write(
        &dir,
        "cmp.cfg",
        "problem.n = 30\nsolver.rank = 2\nsolver.max_outer = 8\nsolver.early_shift = 0\nsolver.seed = 4\n\
         compare.variants = jd, rqi\ncompare.jd.method = lrjd\ncompare.rqi.method = lrrqi\noutput.dir = traces\n",
    );
    let out = lrjd(&["compare", &cfg]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("jd") && stdout.contains("rqi"), "{stdout}");
    for name in ["jd.csv", "rqi.csv"] {
        assert!(dir.join("traces").join(name).is_file());
    }
    let merged = fs::read_to_string(dir.join("traces/merged.csv")).unwrap();
    let mut lines = merged.lines();
    assert_eq!(lines.next(), Some("variant,iter,resid,time_s"));
    let rows: Vec<&str> = lines.collect();
    // Both variants start from the same point.
    let first = |v: &str| {
        rows.iter()
            .find(|r| r.starts_with(&format!("{v},0,")))
            .unwrap()
            .split(',')
            .nth(2)
            .unwrap()
            .to_string()
    };
    assert_eq!(first("jd"), first("rqi"));
}

#[test]
fn compare_needs_two_variants() {
    let dir = scratch_dir("one-variant");
    let cfg = write(&dir, "cmp.cfg", "problem.n = 20\ncompare.variants = only\n");
    assert_eq!(lrjd(&["compare", &cfg]).status.code(), Some(1));
}

#[test]
fn seed_override_is_deterministic() {
    let dir = scratch_dir("seed");
    let cfg = write(
        &dir,
        "s.cfg",
        "problem.n = 24\nsolver.rank = 2\nsolver.max_outer = 6\nsolver.seed = 1\noutput.trace = t.csv\n",
    );
    let run = |seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_lrjd"))
            .args(["solve", &cfg])
            .env("LRJD_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        let text = fs::read_to_string(dir.join("t.csv")).unwrap();
        text.lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let (a, b, c) = (run("9"), run("9"), run("10"));
    assert_eq!(a, b);
    assert_ne!(a[1], c[1]);
}

#[test]
fn oracle_reports_reference_pair() {
    let dir = scratch_dir("oracle");
    let cfg = write(
        &dir,
        "o.cfg",
        "problem.kind = laplacian\nproblem.n = 12\nproblem.m = 10\nsolver.rank = 2\n\
         output.summary = ref.txt\noutput.vector = ref.vec\n",
    );
    assert_eq!(lrjd(&["oracle", &cfg]).status.code(), Some(0));
    let summary = fs::read_to_string(dir.join("ref.txt")).unwrap();
    let lambda: f64 = summary_value(&summary, "lambda").parse().unwrap();
    assert!((lambda - laplacian_min_eigenvalue(12, 10)).abs() <= 1e-9 * lambda);
    let x = lrjd::io::read_vector(&dir.join("ref.vec")).unwrap();
    assert_eq!(x.len(), 120);
    // The Laplacian eigenvector is rank one.
    let trunc: f64 = summary_value(&summary, "truncation_error").parse().unwrap();
    assert!(trunc <= 1e-10);
}

#[test]
fn check_fast_passes_and_catches_fault() {
    let out = lrjd(&["check", "--level", "fast"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("[PASS]").count(), 7);
    let bad = lrjd(&["check", "--gauge-fault", "1e-3"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("[FAIL] gauge"));
}
