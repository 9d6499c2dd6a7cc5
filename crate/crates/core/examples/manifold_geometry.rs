//! Tangent projection and retraction on the unit-norm fixed-rank manifold.

use lrjd::manifold::{project_to_n_tangent, retract, FixedRankPoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> Result<(), lrjd::error::Error> {
    let (n, m, r) = (30, 20, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = FixedRankPoint::random(n, m, r, &mut rng)?;
    let z: Vec<f64> = (0..n * m).map(|_| StandardNormal.sample(&mut rng)).collect();

    let xi = project_to_n_tangent(&x, &z)?;
    let xi = xi.scale(1.0 / xi.norm());
    let twice = project_to_n_tangent(&x, &xi.to_vec(&x))?;
    println!(
        "projection idempotence defect {:.1e}",
        (twice.to_dense(&x) - xi.to_dense(&x)).norm()
    );

    // Retraction error against the straight line is second order in t.
    let xd = x.to_dense();
    let xid = xi.to_dense(&x);
    for t in [1e-1, 1e-2, 1e-3, 1e-4] {
        let y = retract(&x, &xi, t)?;
        let err = (y.to_dense() - (&xd + &xid * t)).norm();
        println!("t = {t:.0e}: |R(x, t xi) - (x + t xi)| = {err:.2e}");
    }
    Ok(())
}
