//! Smallest eigenpair of the 2D Dirichlet Laplacian with rank-1 LRJD.
//!
//! `cargo run --release --example laplacian_lrjd -- 64`

use lrjd::eigensolvers::{solve, SolverConfig};
use lrjd::problems::{build_laplacian2d, laplacian_min_eigenvalue};

fn main() -> Result<(), lrjd::error::Error> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(32);
    let op = build_laplacian2d(n, n)?;
    let cfg = SolverConfig {
        rank: 1,
        outer_tol: 1e-10,
        early_shift: Some(0.0),
        seed: 1,
        ..SolverConfig::default()
    };
    let res = solve(&op, &cfg, None)?;
    for row in &res.trace.rows {
        println!("{:3}  theta {:.12}  resid {:.3e}", row.iter, row.theta, row.resid);
    }
    let exact = laplacian_min_eigenvalue(n, n);
    println!(
        "n = {n}: theta = {:.14}, exact = {exact:.14}, error {:.1e}",
        res.theta,
        (res.theta - exact).abs()
    );
    Ok(())
}
