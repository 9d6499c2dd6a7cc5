//! GMRES iterations on one local system with and without the
//! block-Jacobi preconditioner.

use std::sync::Arc;

use lrjd::correction::{CorrectionVariant, InnerSolve, LocalSystem};
use lrjd::krylov::{BlockJacobi, ExpSumPrecond, InnerStrategy, KronSumSymbol, KrylovConfig};
use lrjd::manifold::FixedRankPoint;
use lrjd::problems::build_laplacian2d;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 64;
    let op = build_laplacian2d(n, n)?;
    let mode = |k: usize| {
        DMatrix::from_fn(n, 1, |i, _| {
            ((i + 1) as f64 * k as f64 * std::f64::consts::PI / (n + 1) as f64).sin()
        })
    };
    let z =
        &mode(1) * mode(1).transpose() + &mode(2) * mode(3).transpose() * 0.1 + &mode(3) * mode(2).transpose() * 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let x = FixedRankPoint::from_dense(&(&z / z.norm() + noise * (0.01 / n as f64)), 3)?;
    let sys = LocalSystem::new(&op, &x, CorrectionVariant::JacobiDavidson)?;
    let cfg = KrylovConfig {
        max_iters: 1000,
        rel_tol: 1e-8,
        ..KrylovConfig::default()
    };

    let (_, plain) = sys.solve(&cfg, InnerSolve::Gmres)?;
    println!("{:>14}: {:4} iterations", "none", plain.krylov.iters);
    let symbol = KronSumSymbol::from_operator(&op).ok_or("no Kronecker-sum symbol")?;
    for k in [5, 10, 20] {
        let pre = Arc::new(ExpSumPrecond::from_symbol(&symbol, 0.0, k)?);
        let err = pre.quadrature_error();
        let bj = BlockJacobi::new(&sys, &InnerStrategy::ExpSum(pre), 0.0)?;
        let (_, st) = sys.solve(&cfg, InnerSolve::Preconditioned(&bj))?;
        println!(
            "{:>14}: {:4} iterations (scalar error {err:.1e})",
            format!("expsum K={k}"),
            st.krylov.iters
        );
    }
    let bj = BlockJacobi::new(&sys, &InnerStrategy::DenseSmall, 0.0)?;
    let (_, st) = sys.solve(&cfg, InnerSolve::Preconditioned(&bj))?;
    println!("{:>14}: {:4} iterations", "dense blocks", st.krylov.iters);
    Ok(())
}
