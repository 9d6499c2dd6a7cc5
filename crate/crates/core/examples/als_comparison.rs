//! LRJD against alternating least squares on the same fixed-rank start.

use lrjd::eigensolvers::{initial_point, solve, Method, SolverConfig};
use lrjd::problems::{build_convection_diffusion, PdeSpec};

fn main() -> Result<(), lrjd::error::Error> {
    let op = build_convection_diffusion(&PdeSpec {
        n: 64,
        ..PdeSpec::default()
    })?
    .operator;
    let base = SolverConfig {
        rank: 3,
        max_outer: 100,
        outer_tol: 1e-8,
        early_shift: Some(0.0),
        seed: 5,
        ..SolverConfig::default()
    };
    let x0 = initial_point(&op, &base)?;
    for method in [Method::Lrjd, Method::Als] {
        let res = solve(&op, &SolverConfig { method, ..base.clone() }, Some(x0.clone()))?;
        let inner: usize = res.trace.rows.iter().map(|r| r.inner_iters).sum();
        println!(
            "{method:>5}: theta {:.10}  min resid {:.2e}  {} outer / {inner} inner iterations, {:.2}s",
            res.theta,
            res.trace.min_resid(),
            res.iterations(),
            res.trace.last().map_or(0.0, |r| r.time_s)
        );
    }
    Ok(())
}
