use nalgebra::{DMatrix, DVector};

use super::{full_jd, initial_point, EigResult, Eigenvector, FullJdOptions, Monitor, SolverConfig, Status};
use crate::dense::EXACT_LOCAL_LIMIT;
use crate::error::{check_len, Error, Result};
use crate::manifold::{rayleigh_quotient, residual_norm, FixedRankPoint};
use crate::operator::{BlockId, KronSumOperator, LocalBlock, ProjectedFactors};

/// Which factor a half-sweep keeps fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlsSide {
    /// Fix `V`, solve for `U S` with the `(v, v)` block.
    FixV,
    /// Fix `U`, solve for `S Vᵀ` with the `(u, u)` block.
    FixU,
}

/// One half-sweep: smallest eigenpair of the block restricted to the free
/// factor, then re-factorization to SVD form. Returns the new point and the
/// inner iterations spent.
pub fn als_half_sweep(
    op: &KronSumOperator,
    x: &FixedRankPoint,
    side: AlsSide,
    cfg: &SolverConfig,
) -> Result<(FixedRankPoint, usize)> {
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    let r = x.rank();
    let s = x.s_matrix();
    let (rows, cols, block, start) = match side {
        AlsSide::FixV => (x.n(), r, LocalBlock::V, x.u() * &s),
        AlsSide::FixU => (r, x.m(), LocalBlock::U, &s * x.v().transpose()),
    };
    let id = BlockId::new(block, block);
    let apply = |w: &DVector<f64>| -> Result<DVector<f64>> {
        let wm = DMatrix::from_column_slice(rows, cols, w.as_slice());
        Ok(DVector::from_column_slice(pf.apply_block_matrix(id, &wm)?.as_slice()))
    };
    let dim = rows * cols;
    let (w, iters) = if cfg.exact_inner && dim <= EXACT_LOCAL_LIMIT && op.symmetric_hint() {
        let mut a = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            a.set_column(j, &apply(&e)?);
        }
        let eig = ((&a + a.transpose()) * 0.5).symmetric_eigen();
        let k = (0..dim)
            .min_by(|&i, &j| {
                cfg.target
                    .key(eig.eigenvalues[i])
                    .total_cmp(&cfg.target.key(eig.eigenvalues[j]))
            })
            .expect("dim > 0");
        (eig.eigenvectors.column(k).into_owned(), 0)
    } else {
        let exact = cfg.exact_inner;
        let opts = FullJdOptions {
            max_outer: if exact { 200 } else { cfg.als_inner_outer },
            tol: if exact { 1e-12 } else { 0.1 * cfg.outer_tol },
            inner: cfg.inner.clone(),
            max_basis: cfg.subspace.max_basis.max(cfg.subspace.restart_keep + 2),
            restart_keep: cfg.subspace.restart_keep,
            target: cfg.target,
            symmetric: op.symmetric_hint(),
            stagnation_window: cfg.stagnation_window,
            stagnation_ratio: if exact { 1.0 } else { cfg.stagnation_ratio },
            ..FullJdOptions::default()
        };
        let x0 = DVector::from_column_slice(start.as_slice());
        let res =
            full_jd(&apply, &x0, &opts).map_err(|e| Error::Solver(format!("ALS inner eigensolve failed: {e}")))?;
        let spent = res.trace.rows.iter().map(|r| r.inner_iters).sum();
        (res.x, spent)
    };
    let wm = DMatrix::from_column_slice(rows, cols, w.as_slice());
    let eye = DMatrix::identity(r, r);
    let next = match side {
        AlsSide::FixV => FixedRankPoint::from_factored(&wm, &eye, x.v(), r)?,
        AlsSide::FixU => FixedRankPoint::from_factored(x.u(), &eye, &wm.transpose(), r)?,
    };
    Ok((next, iters))
}

/// Alternating minimization over `U` and `V`; one trace row per full sweep.
pub fn run_als(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<FixedRankPoint>) -> Result<EigResult> {
    cfg.validate()?;
    let mut x = match x0 {
        Some(p) => {
            check_len("start rows", op.n(), p.n())?;
            check_len("start cols", op.m(), p.m())?;
            p
        }
        None => initial_point(op, cfg)?,
    };
    let mut mon = Monitor::from_config(cfg);
    let mut iterates = Vec::new();
    let (mut converged, mut stagnated) = (false, false);
    let mut inner = 0;
    let (mut theta, mut resid);
    let mut k = 0;
    loop {
        theta = rayleigh_quotient(op, &x)?;
        resid = residual_norm(op, &x, theta)?;
        let status = mon.record(theta, resid, inner, 0, 0.0)?;
        if cfg.record_iterates {
            iterates.push(x.clone());
        }
        match status {
            Status::Converged => {
                converged = true;
                break;
            }
            Status::Stagnated => {
                stagnated = true;
                break;
            }
            Status::Continue => {}
        }
        if k == cfg.max_outer {
            break;
        }
        let (half, a) = als_half_sweep(op, &x, AlsSide::FixV, cfg)?;
        let (full, b) = als_half_sweep(op, &half, AlsSide::FixU, cfg)?;
        x = full;
        inner = a + b;
        k += 1;
    }
    Ok(EigResult {
        vector: Eigenvector::LowRank(x),
        theta,
        residual_norm: resid,
        converged,
        stagnated,
        trace: mon.into_trace(),
        iterates,
        precond_fallbacks: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{KronTerm, SparseFactor};
    use crate::problems::build_diag_kron;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn separable_rank_one_is_exact_after_one_sweep() {
        let op = build_diag_kron(&[3.0, 1.0, 4.0, 1.5], &[2.0, 0.25, 5.0]).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            max_outer: 1,
            exact_inner: true,
            outer_tol: 1e-10,
            ..SolverConfig::default()
        };
        let res = run_als(&op, &cfg, None).unwrap();
        assert!((res.theta - 1.25).abs() <= 1e-10);
        assert!(res.residual_norm <= 1e-10);
    }

    #[test]
    fn exact_half_sweeps_do_not_increase_theta() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut sym = |k: usize| {
            let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
            SparseFactor::from_dense(&(&a + a.transpose()))
        };
        let op = KronSumOperator::new(
            vec![KronTerm { f: sym(7), g: sym(6) }, KronTerm { f: sym(7), g: sym(6) }],
            true,
        )
        .unwrap();
        let cfg = SolverConfig {
            rank: 2,
            exact_inner: true,
            ..SolverConfig::default()
        };
        let mut x = initial_point(&op, &cfg).unwrap();
        let mut last = rayleigh_quotient(&op, &x).unwrap();
        for i in 0..8 {
            let side = if i % 2 == 0 { AlsSide::FixV } else { AlsSide::FixU };
            x = als_half_sweep(&op, &x, side, &cfg).unwrap().0;
            let th = rayleigh_quotient(&op, &x).unwrap();
            assert!(th <= last + 1e-10, "half-sweep {i}: {th} > {last}");
            last = th;
        }
    }

    #[test]
    fn inexact_inner_solves_still_converge_on_laplacian() {
        let op = crate::problems::build_laplacian2d(10, 10).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            max_outer: 10,
            outer_tol: 1e-8,
            ..SolverConfig::default()
        };
        let res = run_als(&op, &cfg, None).unwrap();
        assert!(res.converged, "{:?}", res.trace.last());
    }
}
