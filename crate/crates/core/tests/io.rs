mod common;

use std::fs;

use common::scratch_dir;
use lrjd::eigensolvers::{solve, SolverConfig};
use lrjd::error::Error;
use lrjd::io::{load_operator, read_matrix_market, write_operator};
use lrjd::problems::{build_convection_diffusion, PdeSpec};

#[test]
fn operator_survives_manifest_round_trip() {
    let dir = scratch_dir("io-roundtrip");
    let op = build_convection_diffusion(&PdeSpec {
        n: 16,
        ..PdeSpec::default()
    })
    .unwrap()
    .operator;
    let manifest = write_operator(&dir, "cd", &op).unwrap();
    let back = load_operator(&manifest).unwrap();
    assert_eq!((back.n(), back.m(), back.num_terms()), (op.n(), op.m(), op.num_terms()));
    let cfg = SolverConfig {
        rank: 2,
        max_outer: 10,
        early_shift: Some(0.0),
        seed: 3,
        ..SolverConfig::default()
    };
    let (a, b) = (solve(&op, &cfg, None).unwrap(), solve(&back, &cfg, None).unwrap());
    assert!((a.theta - b.theta).abs() <= 1e-10 * a.theta.abs());
}

#[test]
fn manifest_drives_cli_solve() {
    let dir = scratch_dir("io-cli");
    let op = lrjd::problems::build_laplacian2d(10, 8).unwrap();
    write_operator(&dir, "lap", &op).unwrap();
    let cfg = dir.join("m.cfg");
    fs::write(
        &cfg,
        "problem.manifest = lap.manifest\nsolver.rank = 1\nsolver.early_shift = 0\noutput.summary = s.txt\n",
    )
    .unwrap();
    let out = common::lrjd(&["solve", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let theta: f64 = common::summary_value(&fs::read_to_string(dir.join("s.txt")).unwrap(), "theta")
        .parse()
        .unwrap();
    assert!((theta - lrjd::problems::laplacian_min_eigenvalue(10, 8)).abs() <= 1e-8);
}

#[test]
fn bad_matrix_market_reports_line() {
    let dir = scratch_dir("io-bad");
    let p = dir.join("bad.mtx");
    fs::write(
        &p,
        "%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 2.0\n4 1 1.0\n",
    )
    .unwrap();
    match read_matrix_market(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        read_matrix_market(&dir.join("nope.mtx")),
        Err(Error::MissingFile(_))
    ));
}
