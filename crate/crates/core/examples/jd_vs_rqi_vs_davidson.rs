//! Three low-rank correction schemes from the same start with inexact
//! inner solves. Writes `methods.csv` (variant,iter,resid,time_s).

use lrjd::cli::{merged_csv, ranking_table, VariantOutcome};
use lrjd::eigensolvers::{initial_point, solve, Method, SolverConfig};
use lrjd::krylov::KrylovConfig;
use lrjd::problems::{build_convection_diffusion, PdeSpec};

fn main() -> Result<(), lrjd::error::Error> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let op = build_convection_diffusion(&PdeSpec {
        n,
        ..PdeSpec::default()
    })?
    .operator;
    let base = SolverConfig {
        rank: 3,
        max_outer: 30,
        inner: KrylovConfig::with_budget(100),
        early_shift: Some(0.0),
        stagnation_window: 50,
        ..SolverConfig::default()
    };
    let x0 = initial_point(&op, &base)?;
    let outcomes: Vec<VariantOutcome> = [
        ("jd", Method::Lrjd),
        ("rqi", Method::Lrrqi),
        ("davidson", Method::LrDavidson),
    ]
    .into_iter()
    .map(|(name, method)| VariantOutcome {
        name: name.into(),
        result: solve(&op, &SolverConfig { method, ..base.clone() }, Some(x0.clone())).map_err(|e| e.to_string()),
    })
    .collect();
    print!("{}", ranking_table(&outcomes, 1e-4));
    std::fs::write("methods.csv", merged_csv(&outcomes))?;
    Ok(())
}
