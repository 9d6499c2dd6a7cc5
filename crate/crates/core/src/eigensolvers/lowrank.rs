use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    initial_point, select_ritz, CoeffOpt, EigResult, Eigenvector, LineSearch, Monitor, PrecondChoice, SolverConfig,
    Status, SubspaceMode, Target,
};
use crate::correction::{CorrectionVariant, InnerSolve, InnerStats, LocalSystem};
use crate::error::{check_len, Error, Result};
use crate::krylov::{BlockJacobi, ExpSumPrecond, InnerStrategy, KronSumSymbol};
use crate::lowrank::{hcat, LowRank};
use crate::manifold::{
    point_local, project_lowrank, rayleigh_quotient, residual_from_factors, retract, FixedRankPoint, GaugeKind,
    LocalVector, TangentVector,
};
use crate::operator::{KronSumOperator, ProjectedFactors};

/// Attempts (halving the step each time) before a rank-deficient retraction is fatal.
const RETRACTION_RETRIES: usize = 10;

/// Relative norm below which a new direction is treated as dependent.
const DROP_TOL: f64 = 1e-10;

pub fn run_lrjd(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<FixedRankPoint>) -> Result<EigResult> {
    run_lowrank(op, cfg, x0, CorrectionVariant::JacobiDavidson)
}

/// Tangent-constrained inverse iteration; no subspace acceleration or line search.
pub fn run_lrrqi(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<FixedRankPoint>) -> Result<EigResult> {
    run_lowrank(op, cfg, x0, CorrectionVariant::Rqi)
}

pub fn run_lr_davidson(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<FixedRankPoint>) -> Result<EigResult> {
    run_lowrank(op, cfg, x0, CorrectionVariant::Davidson)
}

/// Best rank-`r` unit-norm approximation of the embedded tangent vector `t`.
pub fn retract_full(x: &FixedRankPoint, t: &TangentVector) -> Result<FixedRankPoint> {
    check_len("tangent U rows", x.n(), t.u_xi.nrows())?;
    check_len("tangent V rows", x.m(), t.v_xi.nrows())?;
    let z = t.embed(x);
    FixedRankPoint::from_factored(&z.left, &DMatrix::identity(z.width(), z.width()), &z.right, x.rank())
}

fn build_strategy(op: &KronSumOperator, cfg: &SolverConfig) -> Result<Option<InnerStrategy>> {
    Ok(match &cfg.precond {
        PrecondChoice::None => None,
        PrecondChoice::DenseSmall => Some(InnerStrategy::DenseSmall),
        PrecondChoice::InnerKrylov { budget } => Some(InnerStrategy::InnerKrylov(crate::krylov::KrylovConfig {
            max_iters: *budget,
            rel_tol: 1e-12,
            ..Default::default()
        })),
        PrecondChoice::ExpSum { k } => {
            let symbol = KronSumSymbol::from_operator(op).ok_or_else(|| {
                Error::Preconditioner("operator has no identity-paired terms to form a Kronecker-sum symbol".into())
            })?;
            Some(InnerStrategy::ExpSum(Arc::new(ExpSumPrecond::from_symbol(
                &symbol,
                cfg.precond_shift,
                *k,
            )?)))
        }
    })
}

fn inner_solve(
    sys: &LocalSystem<'_>,
    cfg: &SolverConfig,
    strategy: Option<&InnerStrategy>,
) -> Result<(TangentVector, InnerStats)> {
    if cfg.exact_inner {
        return sys.solve(&cfg.inner, InnerSolve::Exact);
    }
    if let Some(s) = strategy {
        match BlockJacobi::new(sys, s, cfg.precond_shift) {
            Ok(bj) => return sys.solve(&cfg.inner, InnerSolve::Preconditioned(&bj)),
            Err(Error::Preconditioner(_)) => {
                let (t, mut st) = sys.solve(&cfg.inner, InnerSolve::Gmres)?;
                st.precond_fallback = true;
                return Ok((t, st));
            }
            Err(e) => return Err(e),
        }
    }
    sys.solve(&cfg.inner, InnerSolve::Gmres)
}

fn retract_with_backoff(x: &FixedRankPoint, xi: &TangentVector, alpha: f64) -> Result<(FixedRankPoint, f64)> {
    let mut a = alpha;
    let mut last_ratio = 0.0;
    for _ in 0..=RETRACTION_RETRIES {
        match retract(x, xi, a) {
            Ok(p) => return Ok((p, a)),
            Err(Error::RankDegeneracy { ratio }) => {
                last_ratio = ratio;
                a *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::NumericalFailure {
        iter: 0,
        msg: format!(
            "retraction stayed rank-deficient (σ_r/σ_1 = {last_ratio:.3e}) after {RETRACTION_RETRIES} step halvings"
        ),
    })
}

fn local_dot(a: &LocalVector, b: &LocalVector) -> f64 {
    a.data.dot(&b.data)
}

fn apply_a(pf: &ProjectedFactors<'_>, tau: &LocalVector) -> LocalVector {
    LocalVector::from_parts(&pf.apply_local(&tau.to_parts()))
}

/// Minimizer of `ρ(α) = (θ + 2αb + α²c) / (1 + α²‖ξ‖²)` with `b = xᵀA_sym ξ`,
/// `c = ξᵀAξ`, for `ξ ⟂ x`. Returns `α` (0 when `ξ = 0`).
pub fn exact_line_search(
    pf: &ProjectedFactors<'_>,
    x: &FixedRankPoint,
    xi: &TangentVector,
    target: Target,
) -> Result<f64> {
    let tau = xi.to_local();
    let nrm = tau.norm();
    if nrm == 0.0 {
        return Ok(0.0);
    }
    let p = point_local(x);
    let (ap, at) = (apply_a(pf, &p), apply_a(pf, &tau));
    let theta = local_dot(&p, &ap);
    let b = 0.5 * (local_dot(&p, &at) + local_dot(&tau, &ap)) / nrm;
    let c = local_dot(&tau, &at) / (nrm * nrm);
    let h = DMatrix::from_row_slice(2, 2, &[theta, b, b, c]);
    let pair = select_ritz(&h, true, target)?;
    let (c0, c1) = (pair.coeffs[0], pair.coeffs[1]);
    if c0.abs() <= 1e-12 * c1.abs() {
        return Ok(c1.signum() * 1e12 / nrm);
    }
    Ok(c1 / (c0 * nrm))
}

fn armijo(op: &KronSumOperator, pf: &ProjectedFactors<'_>, x: &FixedRankPoint, xi: &TangentVector) -> Result<f64> {
    let p = point_local(x);
    let tau = xi.to_local();
    let (ap, at) = (apply_a(pf, &p), apply_a(pf, &tau));
    let theta = local_dot(&p, &ap);
    let slope = local_dot(&p, &at) + local_dot(&tau, &ap);
    if slope == 0.0 {
        return Ok(0.0);
    }
    let mut alpha = if slope > 0.0 { -1.0 } else { 1.0 };
    for _ in 0..30 {
        if let Ok(y) = retract(x, xi, alpha) {
            if rayleigh_quotient(op, &y)? <= theta + 1e-4 * alpha * slope {
                return Ok(alpha);
            }
        }
        alpha *= 0.5;
    }
    Ok(0.0)
}

/// Directions carried between outer iterations.
enum Carried {
    /// Ambient embeddings of the previous tangent basis (without the iterate).
    Transported(Vec<LowRank>),
    /// Ambient vectors with their images under `A`.
    Unprojected(Vec<(LowRank, LowRank)>),
}

struct Step {
    next: FixedRankPoint,
    basis: usize,
    alpha: f64,
}

fn run_lowrank(
    op: &KronSumOperator,
    cfg: &SolverConfig,
    x0: Option<FixedRankPoint>,
    variant: CorrectionVariant,
) -> Result<EigResult> {
    cfg.validate()?;
    let mut x = match x0 {
        Some(p) => {
            check_len("start rows", op.n(), p.n())?;
            check_len("start cols", op.m(), p.m())?;
            p
        }
        None => initial_point(op, cfg)?,
    };
    let strategy = build_strategy(op, cfg)?;
    let mut mon = Monitor::from_config(cfg);
    let mut carried = match cfg.subspace.mode {
        SubspaceMode::Transported => Carried::Transported(Vec::new()),
        SubspaceMode::Unprojected => Carried::Unprojected(Vec::new()),
    };
    let use_subspace = cfg.subspace.enabled && variant != CorrectionVariant::Rqi;
    let (mut inner_iters, mut basis, mut alpha) = (0, 0, 0.0);
    let mut iterates = Vec::new();
    let mut fallbacks = 0;
    let (mut converged, mut stagnated) = (false, false);
    let (mut theta, mut resid);
    let mut k = 0;
    loop {
        let sys = LocalSystem::new(op, &x, variant)?;
        theta = sys.rayleigh_quotient();
        resid = residual_from_factors(sys.factors(), &x, theta);
        let status = mon.record(theta, resid, inner_iters, basis, alpha)?;
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
        let shift = cfg.correction_shift(theta, resid);
        let shifted;
        let solve_sys = if shift == theta {
            &sys
        } else {
            shifted = sys.clone().with_shift(shift);
            &shifted
        };
        let (xi, stats) = inner_solve(solve_sys, cfg, strategy.as_ref())?;
        inner_iters = stats.krylov.iters;
        fallbacks += usize::from(stats.precond_fallback);
        let step = if variant == CorrectionVariant::Rqi {
            Step {
                next: retract_full(&x, &xi)?,
                basis: 0,
                alpha: 1.0,
            }
        } else if use_subspace {
            match &mut carried {
                Carried::Transported(c) => transported_step(op, &sys, &xi, cfg, c)?,
                Carried::Unprojected(c) => unprojected_step(op, &sys, &xi, cfg, c)?,
            }
        } else {
            line_search_step(op, &sys, xi, cfg)?
        };
        x = step.next;
        basis = step.basis;
        alpha = step.alpha;
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
        precond_fallbacks: fallbacks,
    })
}

/// Remove the component along `x` (Davidson corrections are not orthogonal to the iterate).
fn orthogonal_to_point(x: &FixedRankPoint, xi: &TangentVector) -> TangentVector {
    let mut t = xi.clone();
    let s = x.s_matrix();
    let c = t.s_xi.dot(&s);
    t.s_xi -= s * c;
    t.gauge = GaugeKind::SphereIntersection;
    t
}

fn line_search_step(
    op: &KronSumOperator,
    sys: &LocalSystem<'_>,
    xi: TangentVector,
    cfg: &SolverConfig,
) -> Result<Step> {
    let x = sys.point();
    let xi = orthogonal_to_point(x, &xi);
    if xi.norm() <= 1e-14 {
        return Ok(Step {
            next: x.clone(),
            basis: 0,
            alpha: 0.0,
        });
    }
    let alpha = match cfg.line_search {
        LineSearch::Off => 1.0,
        LineSearch::ExactQuadratic => exact_line_search(sys.factors(), x, &xi, cfg.target)?,
        LineSearch::Armijo => armijo(op, sys.factors(), x, &xi)?,
    };
    let (next, alpha) = retract_with_backoff(x, &xi, alpha)?;
    Ok(Step { next, basis: 0, alpha })
}

/// Two-pass Gram–Schmidt of `v` against `basis`; `None` if `v` is dependent.
fn orthonormalize_into(basis: &[DVector<f64>], mut v: DVector<f64>) -> Option<DVector<f64>> {
    let original = v.norm();
    if original == 0.0 || !original.is_finite() {
        return None;
    }
    for _ in 0..2 {
        for b in basis {
            let h = b.dot(&v);
            v.axpy(-h, b, 1.0);
        }
    }
    let nrm = v.norm();
    (nrm > DROP_TOL * original).then(|| v / nrm)
}

fn trim_for_restart<T>(carried: &mut Vec<T>, cfg: &SolverConfig) {
    // Room for the iterate and the new direction.
    if carried.len() + 2 > cfg.subspace.max_basis {
        let keep = cfg.subspace.restart_keep;
        let drop = carried.len() - keep.min(carried.len());
        carried.drain(..drop);
    }
}

fn transported_step(
    op: &KronSumOperator,
    sys: &LocalSystem<'_>,
    xi: &TangentVector,
    cfg: &SolverConfig,
    carried: &mut Vec<LowRank>,
) -> Result<Step> {
    let x = sys.point();
    let (n, m, r) = (x.n(), x.m(), x.rank());
    trim_for_restart(carried, cfg);
    let mut basis: Vec<DVector<f64>> = vec![point_local(x).data];
    for z in carried.iter() {
        let t = project_lowrank(x, z, GaugeKind::ManifoldOnly)?.to_local().data;
        if let Some(v) = orthonormalize_into(&basis, t) {
            basis.push(v);
        }
    }
    let fresh = orthonormalize_into(&basis, xi.to_local().data);
    let had_fresh = fresh.is_some();
    if let Some(v) = fresh {
        basis.push(v);
    }
    let wrap = |d: DVector<f64>| LocalVector::from_data(d, n, m, r).expect("local length");
    let images: Vec<DVector<f64>> = basis
        .iter()
        .map(|b| apply_a(sys.factors(), &wrap(b.clone())).data)
        .collect();
    let b = basis.len();
    let h = DMatrix::from_fn(b, b, |i, j| basis[i].dot(&images[j]));
    let pair = select_ritz(&h, op.symmetric_hint(), cfg.target)?;
    let combine = |c: &DVector<f64>| {
        let mut y = DVector::zeros(basis[0].len());
        for (bi, ci) in basis.iter().zip(c.iter()) {
            y.axpy(*ci, bi, 1.0);
        }
        TangentVector::from_local(&wrap(y), GaugeKind::ManifoldOnly)
    };
    let (next, alpha) = if !had_fresh && b == 1 {
        (x.clone(), 0.0)
    } else {
        match cfg.subspace.coeff_opt {
            CoeffOpt::RitzOnly => (retract_full(x, &combine(&pair.coeffs))?, 1.0),
            opt => coefficient_search(op, x, &pair.coeffs, opt, &combine)?,
        }
    };
    *carried = basis[1..]
        .iter()
        .map(|v| TangentVector::from_local(&wrap(v.clone()), GaugeKind::ManifoldOnly).embed(x))
        .collect();
    Ok(Step { next, basis: b, alpha })
}

/// Rescale Ritz coefficients to lower the retracted Rayleigh quotient. The
/// scaling `t = 0` of the non-iterate part reproduces the iterate, so the
/// sequential mode never increases the Rayleigh quotient.
fn coefficient_search(
    op: &KronSumOperator,
    x: &FixedRankPoint,
    coeffs: &DVector<f64>,
    opt: CoeffOpt,
    combine: &dyn Fn(&DVector<f64>) -> TangentVector,
) -> Result<(FixedRankPoint, f64)> {
    let b = coeffs.len();
    let eval = |c: &DVector<f64>| -> Option<(f64, FixedRankPoint)> {
        let p = retract_full(x, &combine(c)).ok()?;
        let rq = rayleigh_quotient(op, &p).ok()?;
        rq.is_finite().then_some((rq, p))
    };
    let mut best_c = coeffs.clone();
    let mut best = eval(&best_c);
    let mut alpha = 1.0;
    let scale_group =
        |mask: &dyn Fn(usize) -> bool, best_c: &mut DVector<f64>, best: &mut Option<(f64, FixedRankPoint)>| {
            let scaled = |t: f64| DVector::from_fn(b, |i, _| if mask(i) { best_c[i] * t } else { best_c[i] });
            let mut ts: Vec<f64> = (0..=8).map(|i| 0.25 * i as f64).collect();
            // Golden-section refinement around the best grid point.
            let mut vals: Vec<Option<(f64, FixedRankPoint)>> = ts.iter().map(|&t| eval(&scaled(t))).collect();
            let arg = (0..ts.len())
                .filter(|&i| vals[i].is_some())
                .min_by(|&i, &j| vals[i].as_ref().unwrap().0.total_cmp(&vals[j].as_ref().unwrap().0));
            let Some(arg) = arg else { return 1.0 };
            let (mut lo, mut hi) = (ts[arg.saturating_sub(1)], ts[(arg + 1).min(ts.len() - 1)]);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..20 {
                let (a, c) = (hi - g * (hi - lo), lo + g * (hi - lo));
                let (fa, fc) = (eval(&scaled(a)), eval(&scaled(c)));
                let va = fa.as_ref().map_or(f64::INFINITY, |v| v.0);
                let vc = fc.as_ref().map_or(f64::INFINITY, |v| v.0);
                if va <= vc {
                    hi = c;
                    ts.push(a);
                    vals.push(fa);
                } else {
                    lo = a;
                    ts.push(c);
                    vals.push(fc);
                }
            }
            let mut chosen = 1.0;
            for (t, v) in ts.into_iter().zip(vals) {
                if let Some((rq, p)) = v {
                    if best.as_ref().is_none_or(|(bv, _)| rq < *bv) {
                        *best = Some((rq, p));
                        chosen = t;
                    }
                }
            }
            if chosen != 1.0 {
                *best_c = scaled(chosen);
            }
            chosen
        };
    match opt {
        CoeffOpt::LastCoeffLineSearch => {
            alpha = scale_group(&|i| i == b - 1, &mut best_c, &mut best);
        }
        CoeffOpt::SequentialLineSearch => {
            alpha = scale_group(&|i| i > 0, &mut best_c, &mut best);
            for j in 1..b {
                scale_group(&|i| i == j, &mut best_c, &mut best);
            }
        }
        CoeffOpt::RitzOnly => {}
    }
    match best {
        Some((_, p)) => Ok((p, alpha)),
        None => Err(Error::NumericalFailure {
            iter: 0,
            msg: "every candidate Ritz combination was rank-deficient".into(),
        }),
    }
}

fn unprojected_step(
    op: &KronSumOperator,
    sys: &LocalSystem<'_>,
    xi: &TangentVector,
    cfg: &SolverConfig,
    carried: &mut Vec<(LowRank, LowRank)>,
) -> Result<Step> {
    let x = sys.point();
    trim_for_restart(carried, cfg);
    let xv = x.as_lowrank();
    let ax = sys.factors().apply_point(&x.s_matrix());
    let fresh = xi.embed(x);
    let afresh = op.apply_lowrank(&fresh)?;
    let mut vecs: Vec<(LowRank, LowRank)> = vec![(xv, ax)];
    vecs.extend(carried.iter().cloned());
    vecs.push((fresh, afresh));
    let b = vecs.len();
    let gram = DMatrix::from_fn(b, b, |i, j| vecs[i].0.inner(&vecs[j].0));
    let h = DMatrix::from_fn(b, b, |i, j| vecs[i].0.inner(&vecs[j].1));
    // Orthonormal coordinates from the Gram matrix, dropping dependent directions.
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.max();
    let kept: Vec<usize> = (0..b)
        .filter(|&i| eig.eigenvalues[i] > 1e-20 * top.max(1e-300))
        .collect();
    let w = DMatrix::from_fn(b, kept.len(), |i, j| {
        eig.eigenvectors[(i, kept[j])] / eig.eigenvalues[kept[j]].sqrt()
    });
    let hr = w.transpose() * &h * &w;
    let pair = select_ritz(&hr, op.symmetric_hint(), cfg.target)?;
    let a = &w * &pair.coeffs;
    let lefts: Vec<DMatrix<f64>> = vecs.iter().zip(a.iter()).map(|((v, _), ai)| &v.left * *ai).collect();
    let rights: Vec<&DMatrix<f64>> = vecs.iter().map(|(v, _)| &v.right).collect();
    let left = hcat(&lefts.iter().collect::<Vec<_>>());
    let right = hcat(&rights);
    let next = FixedRankPoint::from_factored(&left, &DMatrix::identity(left.ncols(), left.ncols()), &right, x.rank())?;
    *carried = vecs.into_iter().skip(1).collect();
    Ok(Step {
        next,
        basis: kept.len(),
        alpha: 1.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolvers::{dense_reference, SubspaceConfig};
    use crate::krylov::KrylovConfig;
    use crate::lowrank::orthonormalize;
    use crate::operator::{KronTerm, SparseFactor};
    use crate::problems::{build_diag_kron, build_laplacian2d, laplacian_min_eigenvalue};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sym_operator(n: usize, seed: u64) -> KronSumOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |k: usize| {
            let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
            SparseFactor::from_dense(&(&a + a.transpose()))
        };
        KronSumOperator::new(
            vec![KronTerm { f: sym(n), g: sym(n) }, KronTerm { f: sym(n), g: sym(n) }],
            true,
        )
        .unwrap()
    }

    fn point(n: usize, r: usize, seed: u64) -> FixedRankPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = orthonormalize(&DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng)));
        let v = orthonormalize(&DMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng)));
        let core = DMatrix::from_fn(r, r, |i, j| if i == j { (r - i) as f64 } else { 0.0 });
        FixedRankPoint::from_factored(&u, &core, &v, r).unwrap()
    }

    #[test]
    fn retract_full_of_the_point_is_the_point() {
        let x = point(6, 2, 1);
        let t = TangentVector::from_local(&point_local(&x), GaugeKind::ManifoldOnly);
        assert!(retract_full(&x, &t).unwrap().distance_up_to_sign(&x) <= 1e-13);
    }

    #[test]
    fn laplacian_rank_one_converges_to_analytic_value() {
        let op = build_laplacian2d(32, 32).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            max_outer: 25,
            outer_tol: 1e-9,
            inner: KrylovConfig::with_budget(40),
            precond: PrecondChoice::ExpSum { k: 20 },
            ..SolverConfig::default()
        };
        let res = run_lrjd(&op, &cfg, None).unwrap();
        let lambda = laplacian_min_eigenvalue(32, 32);
        assert!((res.theta - lambda).abs() <= 1e-10, "{} vs {lambda}", res.theta);
        assert!(res.trace.len() <= 26);
    }

    #[test]
    fn separable_diagonal_rank_one_is_exact() {
        let df = [3.0, 1.0, 4.0, 1.5, 5.0];
        let dg = [2.0, 0.5, 2.5, 7.0];
        let op = build_diag_kron(&df, &dg).unwrap();
        let cfg = SolverConfig {
            rank: 1,
            max_outer: 30,
            outer_tol: 1e-12,
            inner: KrylovConfig::with_budget(20),
            ..SolverConfig::default()
        };
        let res = run_lrjd(&op, &cfg, None).unwrap();
        assert!(res.converged, "{:?}", res.trace.last());
        assert!((res.theta - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn trace_theta_matches_stored_iterates() {
        let op = sym_operator(6, 3);
        let cfg = SolverConfig {
            rank: 2,
            max_outer: 6,
            record_iterates: true,
            ..SolverConfig::default()
        };
        let res = run_lrjd(&op, &cfg, None).unwrap();
        assert_eq!(res.iterates.len(), res.trace.len());
        for (row, x) in res.trace.rows.iter().zip(&res.iterates) {
            assert!((row.theta - rayleigh_quotient(&op, x).unwrap()).abs() <= 1e-12 * (1.0 + row.theta.abs()));
        }
        for (i, row) in res.trace.rows.iter().enumerate() {
            assert_eq!(row.iter, i);
        }
        let p = res.point().unwrap();
        let rf = crate::manifold::residual_norm(&op, p, rayleigh_quotient(&op, p).unwrap()).unwrap();
        assert!(rf <= 1.01 * res.residual_norm + 1e-14);
    }

    #[test]
    fn rqi_matches_jd_without_subspace_under_exact_solves() {
        let op = sym_operator(6, 5);
        let x0 = point(6, 2, 6);
        let base = SolverConfig {
            rank: 2,
            max_outer: 5,
            outer_tol: 0.0,
            exact_inner: true,
            record_iterates: true,
            stagnation_window: 50,
            ..SolverConfig::default()
        };
        let jd_cfg = SolverConfig {
            subspace: SubspaceConfig {
                enabled: false,
                ..SubspaceConfig::default()
            },
            line_search: LineSearch::Off,
            ..base.clone()
        };
        let jd = run_lrjd(&op, &jd_cfg, Some(x0.clone())).unwrap();
        let rqi = run_lrrqi(&op, &base, Some(x0)).unwrap();
        assert_eq!(jd.iterates.len(), rqi.iterates.len());
        for (a, b) in jd.iterates.iter().zip(&rqi.iterates) {
            assert!(a.distance_up_to_sign(b) <= 1e-8);
        }
    }

    #[test]
    fn exact_davidson_stagnates() {
        let op = sym_operator(6, 7);
        let cfg = SolverConfig {
            rank: 2,
            max_outer: 12,
            exact_inner: true,
            outer_tol: 1e-12,
            ..SolverConfig::default()
        };
        let res = run_lr_davidson(&op, &cfg, None).unwrap();
        let first = res.trace.rows[0].resid;
        assert!(!res.converged);
        assert!(res.trace.rows.iter().all(|r| r.resid >= 0.1 * first));
    }

    #[test]
    fn identity_operator_converges_immediately() {
        let op = KronSumOperator::new(
            vec![KronTerm {
                f: SparseFactor::identity(5),
                g: SparseFactor::identity(6),
            }],
            true,
        )
        .unwrap();
        let cfg = SolverConfig {
            rank: 2,
            ..SolverConfig::default()
        };
        for res in [
            run_lr_davidson(&op, &cfg, None).unwrap(),
            run_lrjd(&op, &cfg, None).unwrap(),
        ] {
            assert!(res.converged);
            assert_eq!(res.trace.len(), 1);
            assert!((res.theta - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sequential_coefficients_never_raise_the_rayleigh_quotient() {
        let op = sym_operator(7, 9);
        let mut cfg = SolverConfig {
            rank: 2,
            max_outer: 8,
            inner: KrylovConfig::with_budget(8),
            ..SolverConfig::default()
        };
        cfg.subspace.coeff_opt = CoeffOpt::SequentialLineSearch;
        let res = run_lrjd(&op, &cfg, None).unwrap();
        for w in res.trace.rows.windows(2) {
            assert!(w[1].theta <= w[0].theta + 1e-10, "{} > {}", w[1].theta, w[0].theta);
        }
    }

    #[test]
    fn unprojected_subspace_also_converges() {
        let op = build_laplacian2d(12, 12).unwrap();
        let mut cfg = SolverConfig {
            rank: 1,
            max_outer: 30,
            outer_tol: 1e-8,
            inner: KrylovConfig::with_budget(20),
            ..SolverConfig::default()
        };
        cfg.subspace.mode = SubspaceMode::Unprojected;
        let res = run_lrjd(&op, &cfg, None).unwrap();
        let rf = dense_reference(&op, Target::SmallestRQ).unwrap();
        assert!(res.converged);
        assert!((res.theta - rf.lambda).abs() <= 1e-8 * rf.lambda);
    }

    #[test]
    fn preconditioner_fallback_is_reported() {
        // Indefinite symbol: the exp-sum build fails up front.
        let op = build_diag_kron(&[-3.0, 1.0, 2.0], &[0.5, 1.0, 4.0]).unwrap();
        let cfg = SolverConfig {
            precond: PrecondChoice::ExpSum { k: 10 },
            ..SolverConfig::default()
        };
        assert!(run_lrjd(&op, &cfg, None).is_err());
        // Singular (v,v) block with dense inner: falls back per iteration.
        let op = build_diag_kron(&[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
        let cfg = SolverConfig {
            precond: PrecondChoice::DenseSmall,
            max_outer: 2,
            outer_tol: 0.0,
            ..SolverConfig::default()
        };
        let res = run_lrjd(&op, &cfg, None).unwrap();
        assert!(res.precond_fallbacks > 0 || res.converged);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn exact_line_search_is_stationary_and_descending(seed in 0u64..500) {
            let op = sym_operator(5, seed);
            let x = point(5, 2, seed + 1);
            let sys = LocalSystem::new(&op, &x, CorrectionVariant::JacobiDavidson).unwrap();
            let (xi, _) = sys.solve(&KrylovConfig::with_budget(6), InnerSolve::Gmres).unwrap();
            prop_assume!(xi.norm() > 1e-8);
            let alpha = exact_line_search(sys.factors(), &x, &xi, Target::SmallestRQ).unwrap();
            let a = op.densify(false).unwrap();
            let xv = DVector::from_vec(x.to_vec());
            let dv = DVector::from_vec(xi.to_vec(&x));
            let rho = |t: f64| {
                let z = &xv + &dv * t;
                z.dot(&(&a * &z)) / z.dot(&z)
            };
            // d/dα of (θ + 2bα + cα²)/(1 + nα²), numerator only.
            let asym = (&a + a.transpose()) * 0.5;
            let (theta, b, c, n2) = (xv.dot(&(&asym * &xv)), xv.dot(&(&asym * &dv)), dv.dot(&(&asym * &dv)), dv.dot(&dv));
            let deriv = (2.0 * b + 2.0 * c * alpha) * (1.0 + n2 * alpha * alpha)
                - (theta + 2.0 * b * alpha + c * alpha * alpha) * 2.0 * n2 * alpha;
            let scale = a.norm() * (1.0 + n2 * alpha * alpha) * (1.0 + alpha.abs()) * (1.0 + dv.norm());
            prop_assert!(deriv.abs() <= 1e-10 * scale, "derivative {deriv}");
            prop_assert!(rho(alpha) <= rho(0.0) + 1e-12 * a.norm());
        }
    }
}
