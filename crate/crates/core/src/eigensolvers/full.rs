use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    select_ritz, ConvergenceTrace, EigResult, Eigenvector, Monitor, PrecondChoice, SolverConfig, Status, Target,
};
use crate::error::{check_len, Error, Result};
use crate::krylov::{gmres, ExpSumPrecond, GmresHooks, KronSumSymbol, KrylovConfig, LinearMap};
use crate::operator::{KronSumOperator, DENSE_LIMIT};

/// Options of the full-space Jacobi–Davidson iteration.
pub struct FullJdOptions<'a> {
    pub max_outer: usize,
    pub tol: f64,
    pub inner: KrylovConfig,
    pub max_basis: usize,
    pub restart_keep: usize,
    pub target: Target,
    pub symmetric: bool,
    pub stagnation_window: usize,
    pub stagnation_ratio: f64,
    /// Orthonormal vectors the iteration is restricted away from.
    pub deflate: &'a [DVector<f64>],
    /// Approximate inverse of `A`, applied before projection.
    pub precond: Option<&'a LinearMap<'a>>,
    /// Fixed correction shift while the residual exceeds the second value.
    pub early_shift: Option<(f64, f64)>,
}

impl Default for FullJdOptions<'_> {
    fn default() -> Self {
        Self {
            max_outer: 100,
            tol: 1e-10,
            inner: KrylovConfig::with_budget(30),
            max_basis: 30,
            restart_keep: 10,
            target: Target::SmallestRQ,
            symmetric: true,
            stagnation_window: 5,
            stagnation_ratio: 1.02,
            deflate: &[],
            precond: None,
            early_shift: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FullJdResult {
    pub x: DVector<f64>,
    pub theta: f64,
    pub resid: f64,
    pub converged: bool,
    pub stagnated: bool,
    pub trace: ConvergenceTrace,
}

fn deflate(q: &[DVector<f64>], v: &mut DVector<f64>) {
    for _ in 0..2 {
        for d in q {
            let h = d.dot(v);
            v.axpy(-h, d, 1.0);
        }
    }
}

/// Classical Jacobi–Davidson on the unit sphere of `R^N` for a matrix-free `A`.
pub fn full_jd(apply: &LinearMap<'_>, x0: &DVector<f64>, opts: &FullJdOptions<'_>) -> Result<FullJdResult> {
    if opts.restart_keep + 2 > opts.max_basis {
        return Err(Error::Precondition("restart_keep + 2 must not exceed max_basis".into()));
    }
    let q = opts.deflate;
    let apply_d = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let mut w = apply(v)?;
        deflate(q, &mut w);
        Ok(w)
    };
    let mut x = x0.clone();
    deflate(q, &mut x);
    let nrm = x.norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::Precondition("start vector vanishes after deflation".into()));
    }
    x /= nrm;
    let mut vs = vec![x.clone()];
    let mut avs = vec![apply_d(&x)?];
    let mut mon = Monitor::new(opts.tol, opts.stagnation_window, opts.stagnation_ratio);
    let mut inner_iters = 0;
    let (mut converged, mut stagnated) = (false, false);
    let mut k = 0;
    let (mut u, mut theta, mut resid);
    loop {
        let b = vs.len();
        let h = DMatrix::from_fn(b, b, |i, j| vs[i].dot(&avs[j]));
        let pair = select_ritz(&h, opts.symmetric, opts.target)?;
        u = DVector::zeros(x.len());
        let mut au = DVector::zeros(x.len());
        for (i, c) in pair.coeffs.iter().enumerate() {
            u.axpy(*c, &vs[i], 1.0);
            au.axpy(*c, &avs[i], 1.0);
        }
        let un = u.norm();
        u /= un;
        au /= un;
        theta = u.dot(&au);
        let r = &au - &u * theta;
        resid = r.norm();
        match mon.record(theta, resid, inner_iters, b, 1.0)? {
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
        if k == opts.max_outer {
            break;
        }
        let project = |v: &mut DVector<f64>| {
            deflate(q, v);
            let h = u.dot(v);
            v.axpy(-h, &u, 1.0);
        };
        let shift = match opts.early_shift {
            Some((s, until)) if resid > until => s,
            _ => theta,
        };
        let op = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let mut w = v.clone();
            project(&mut w);
            let mut out = apply(&w)? - &w * shift;
            project(&mut out);
            Ok(out)
        };
        let pre = |v: &DVector<f64>| -> Result<DVector<f64>> {
            let mut w = (opts.precond.expect("checked"))(v)?;
            project(&mut w);
            Ok(w)
        };
        let hooks = GmresHooks {
            precond: opts.precond.map(|_| &pre as &LinearMap<'_>),
            project: Some(&project),
        };
        let (t, stats) = gmres(&op, &(-&r), &hooks, &opts.inner)?;
        inner_iters = stats.iters;
        if vs.len() >= opts.max_basis {
            // Keep the Ritz vector and the newest directions.
            let keep: Vec<(DVector<f64>, DVector<f64>)> = vs
                .iter()
                .zip(&avs)
                .skip(vs.len() - opts.restart_keep)
                .map(|(v, a)| (v.clone(), a.clone()))
                .collect();
            vs = vec![u.clone()];
            avs = vec![au.clone()];
            for (mut v, mut a) in keep {
                for _ in 0..2 {
                    for (bv, ba) in vs.iter().zip(&avs) {
                        let h = bv.dot(&v);
                        v.axpy(-h, bv, 1.0);
                        a.axpy(-h, ba, 1.0);
                    }
                }
                let n = v.norm();
                if n > 1e-10 {
                    vs.push(v / n);
                    avs.push(a / n);
                }
            }
        }
        let mut t = t;
        let original = t.norm();
        for _ in 0..2 {
            for bv in &vs {
                let h = bv.dot(&t);
                t.axpy(-h, bv, 1.0);
            }
        }
        let tn = t.norm();
        if !(tn > 1e-12 * original) || original == 0.0 {
            stagnated = true;
            break;
        }
        t /= tn;
        avs.push(apply_d(&t)?);
        vs.push(t);
        k += 1;
    }
    Ok(FullJdResult {
        x: u,
        theta,
        resid,
        converged,
        stagnated,
        trace: mon.into_trace(),
    })
}

fn expsum_inverse(op: &KronSumOperator, k: usize, shift: f64) -> Option<ExpSumPrecond> {
    let symbol = KronSumSymbol::from_operator(op)?;
    ExpSumPrecond::from_symbol(&symbol, shift, k).ok()
}

/// Full-space Jacobi–Davidson driven by a [`SolverConfig`]; the exp-sum
/// choice preconditions with the symbol inverse, other choices run unpreconditioned.
pub fn run_dense_jd(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<DVector<f64>>) -> Result<EigResult> {
    cfg.validate()?;
    if op.dim() > 1_000_000 {
        return Err(Error::TooLarge {
            size: op.dim(),
            limit: 1_000_000,
        });
    }
    let x0 = match x0 {
        Some(v) => {
            check_len("start vector", op.dim(), v.len())?;
            v
        }
        None => DVector::from_vec(super::initial_point(op, cfg)?.to_vec()),
    };
    let pre = match cfg.precond {
        PrecondChoice::ExpSum { k } => expsum_inverse(op, k, cfg.precond_shift),
        _ => None,
    };
    let apply = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(DVector::from_vec(op.matvec(v.as_slice())?)) };
    let pre_map = pre
        .as_ref()
        .map(|p| move |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(DVector::from_vec(p.apply(v.as_slice())?)) });
    let opts = FullJdOptions {
        max_outer: cfg.max_outer,
        tol: cfg.outer_tol,
        inner: cfg.inner.clone(),
        max_basis: cfg.subspace.max_basis.max(cfg.subspace.restart_keep + 2),
        restart_keep: cfg.subspace.restart_keep,
        target: cfg.target,
        symmetric: op.symmetric_hint(),
        stagnation_window: cfg.stagnation_window,
        stagnation_ratio: cfg.stagnation_ratio,
        deflate: &[],
        precond: pre_map.as_ref().map(|f| f as &LinearMap<'_>),
        early_shift: cfg.early_shift.map(|s| (s, cfg.early_shift_until)),
    };
    let res = full_jd(&apply, &x0, &opts)?;
    Ok(EigResult {
        vector: Eigenvector::Full(res.x),
        theta: res.theta,
        residual_norm: res.resid,
        converged: res.converged,
        stagnated: res.stagnated,
        trace: res.trace,
        iterates: Vec::new(),
        precond_fallbacks: 0,
    })
}

/// Reference eigenpair and the next eigenvalue in target order.
#[derive(Debug, Clone)]
pub struct DenseReference {
    pub lambda: f64,
    pub x: DVector<f64>,
    pub lambda2: f64,
    /// `‖A x − λ x‖`.
    pub residual: f64,
}

/// Upper bound on `‖A‖_∞`.
fn norm_bound(op: &KronSumOperator) -> f64 {
    let inf = |d: &crate::operator::SparseFactor| {
        let offs = d.row_offsets();
        (0..d.nrows())
            .map(|i| d.values()[offs[i]..offs[i + 1]].iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    op.terms().iter().map(|t| inf(&t.f) * inf(&t.g)).sum()
}

/// Dense eigendecomposition for `N ≤ 4096`; otherwise full-space
/// Jacobi–Davidson to a residual of `1e-12 ‖A‖` (absolute floor `1e-9` attempted
/// first), with the second eigenvalue from a deflated run.
pub fn dense_reference(op: &KronSumOperator, target: Target) -> Result<DenseReference> {
    if op.dim() <= DENSE_LIMIT {
        dense_path(op, target)
    } else {
        iterative_path(op, target)
    }
}

fn dense_path(op: &KronSumOperator, target: Target) -> Result<DenseReference> {
    let a = op.densify(false)?;
    let dim = a.nrows();
    let (lambda, lambda2, x) = if op.symmetric_hint() {
        let eig = a.clone().symmetric_eigen();
        let mut idx: Vec<usize> = (0..dim).collect();
        idx.sort_by(|&i, &j| {
            target
                .key(eig.eigenvalues[i])
                .total_cmp(&target.key(eig.eigenvalues[j]))
        });
        let second = idx.get(1).map_or(f64::NAN, |&i| eig.eigenvalues[i]);
        (
            eig.eigenvalues[idx[0]],
            second,
            eig.eigenvectors.column(idx[0]).into_owned(),
        )
    } else {
        let ev = a.clone().complex_eigenvalues();
        let scale = ev.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let mut real: Vec<f64> = ev.iter().filter(|z| z.im.abs() <= 1e-8 * scale).map(|z| z.re).collect();
        if real.is_empty() {
            return Err(Error::Solver("no real eigenvalue".into()));
        }
        real.sort_by(|a, b| target.key(*a).total_cmp(&target.key(*b)));
        let lambda = real[0];
        let second = real.get(1).copied().unwrap_or(f64::NAN);
        // Inverse iteration with a slightly perturbed shift.
        let sigma = lambda + 1e-10 * scale;
        let lu = (a.clone() - DMatrix::identity(dim, dim) * sigma).lu();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        for _ in 0..4 {
            x = lu
                .solve(&x)
                .ok_or_else(|| Error::Solver("singular shifted matrix in inverse iteration".into()))?;
            x /= x.norm();
        }
        (lambda, second, x)
    };
    let mut x = x;
    let pivot = x
        .iter()
        .copied()
        .fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
    if pivot < 0.0 {
        x.neg_mut();
    }
    let residual = (&a * &x - &x * lambda).norm();
    Ok(DenseReference {
        lambda,
        x,
        lambda2,
        residual,
    })
}

fn iterative_path(op: &KronSumOperator, target: Target) -> Result<DenseReference> {
    if op.dim() > 1_000_000 {
        return Err(Error::TooLarge {
            size: op.dim(),
            limit: 1_000_000,
        });
    }
    let accept = 1e-12 * norm_bound(op);
    let pre = expsum_inverse(op, 20, 0.0);
    let apply = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(DVector::from_vec(op.matvec(v.as_slice())?)) };
    let pre_map = pre
        .as_ref()
        .map(|p| move |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(DVector::from_vec(p.apply(v.as_slice())?)) });
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut x0 = DVector::from_fn(op.dim(), |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        v
    });
    // A few inverse-iteration sweeps with the symbol inverse move the start
    // toward the bottom of the spectrum.
    if let Some(p) = &pre_map {
        for _ in 0..4 {
            x0 = p(&x0)?;
            x0 /= x0.norm();
        }
    }
    let run = |deflate: &[DVector<f64>]| {
        let opts = FullJdOptions {
            max_outer: 400,
            tol: 1e-9f64.min(accept).max(1e-13),
            inner: KrylovConfig {
                max_iters: 60,
                rel_tol: 1e-4,
                ..KrylovConfig::default()
            },
            max_basis: 40,
            restart_keep: 15,
            target,
            symmetric: op.symmetric_hint(),
            stagnation_window: 10,
            stagnation_ratio: 1.001,
            deflate,
            precond: pre_map.as_ref().map(|f| f as &LinearMap<'_>),
            early_shift: None,
        };
        full_jd(&apply, &x0, &opts)
    };
    let first = run(&[])?;
    if !(first.resid <= accept.max(1e-9)) {
        return Err(Error::Solver(format!(
            "reference eigensolve stopped at residual {:.3e} (needed {:.3e})",
            first.resid,
            accept.max(1e-9)
        )));
    }
    let mut x = first.x;
    let pivot = x
        .iter()
        .copied()
        .fold(0.0f64, |p, v| if v.abs() > p.abs() { v } else { p });
    if pivot < 0.0 {
        x.neg_mut();
    }
    let second = run(std::slice::from_ref(&x))?;
    Ok(DenseReference {
        lambda: first.theta,
        x,
        lambda2: second.theta,
        residual: first.resid,
    })
}
