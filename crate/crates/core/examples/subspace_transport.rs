//! Effect of the search subspace: single-vector steps, transported
//! tangent bases and ambient (unprojected) bases.

use lrjd::eigensolvers::{initial_point, solve, SolverConfig, SubspaceMode};
use lrjd::krylov::KrylovConfig;
use lrjd::problems::{build_convection_diffusion, PdeSpec};

fn main() -> Result<(), lrjd::error::Error> {
    let op = build_convection_diffusion(&PdeSpec {
        n: 120,
        ..PdeSpec::default()
    })?
    .operator;
    let base = SolverConfig {
        rank: 5,
        max_outer: 40,
        inner: KrylovConfig::with_budget(20),
        early_shift: Some(0.0),
        seed: 3,
        ..SolverConfig::default()
    };
    let x0 = initial_point(&op, &base)?;
    let mut single = base.clone();
    single.subspace.enabled = false;
    let mut unprojected = base.clone();
    unprojected.subspace.mode = SubspaceMode::Unprojected;
    for (name, cfg) in [
        ("single", single),
        ("transported", base.clone()),
        ("unprojected", unprojected),
    ] {
        let res = solve(&op, &cfg, Some(x0.clone()))?;
        println!(
            "{name:>12}: iterations to 1e-4 {:>4}  min resid {:.2e}",
            res.trace.iters_to(1e-4).map_or("-".into(), |k| k.to_string()),
            res.trace.min_resid()
        );
    }
    Ok(())
}
