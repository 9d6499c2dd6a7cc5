//! Rank-5 LRJD on the convection-diffusion operator, checked against a
//! dense reference and the residual of its best rank-5 approximation.

use lrjd::check::truncation_residual;
use lrjd::eigensolvers::{dense_reference, solve, PrecondChoice, SolverConfig, Target};
use lrjd::krylov::KrylovConfig;
use lrjd::problems::{build_convection_diffusion, PdeSpec};

fn main() -> Result<(), lrjd::error::Error> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(100);
    let problem = build_convection_diffusion(&PdeSpec {
        n,
        ..PdeSpec::default()
    })?;
    let op = &problem.operator;
    println!(
        "n = {n}: {} Kronecker terms (potential rank {}, SVD error {:.1e})",
        op.num_terms(),
        problem.potential_rank,
        problem.potential_error
    );

    let cfg = SolverConfig {
        rank: 5,
        max_outer: 60,
        outer_tol: 1e-10,
        inner: KrylovConfig::with_budget(30),
        precond: PrecondChoice::ExpSum { k: 20 },
        early_shift: Some(0.0),
        ..SolverConfig::default()
    };
    let res = solve(op, &cfg, None)?;
    let reference = dense_reference(op, Target::SmallestRQ)?;
    let (floor, _) = truncation_residual(op, reference.x.as_slice(), cfg.rank)?;

    println!(
        "lrjd:      theta {:.12}  resid {:.3e}  after {} iterations",
        res.theta,
        res.residual_norm,
        res.iterations()
    );
    println!(
        "reference: lambda {:.12} (next {:.6})",
        reference.lambda, reference.lambda2
    );
    println!("best rank-{} residual {floor:.3e}", cfg.rank);
    Ok(())
}
