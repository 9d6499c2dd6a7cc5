//! Restarted GMRES and preconditioners for the local correction systems.

mod block_jacobi;
mod expsum;

pub use block_jacobi::{BlockJacobi, InnerStrategy};
pub use expsum::{ExpSumPrecond, KronSumSymbol};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Budget and stopping rule for GMRES.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovConfig {
    pub max_iters: usize,
    /// Restart length; `None` runs a single cycle of `max_iters`.
    pub restart: Option<usize>,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restart: None,
            rel_tol: 1e-10,
            abs_tol: 0.0,
        }
    }
}

impl KrylovConfig {
    pub fn with_budget(max_iters: usize) -> Self {
        Self {
            max_iters,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Precondition("GMRES budget must be at least 1".into()));
        }
        if let Some(k) = self.restart {
            if k == 0 || k > self.max_iters {
                return Err(Error::Precondition(format!(
                    "restart {k} must lie in 1..={}",
                    self.max_iters
                )));
            }
        }
        if !(self.rel_tol >= 0.0 && self.abs_tol >= 0.0) {
            return Err(Error::Precondition("tolerances must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KrylovStats {
    pub iters: usize,
    /// True relative residual `‖b − A x‖ / ‖b‖` of the returned iterate.
    pub final_relres: f64,
    pub converged: bool,
    /// Happy breakdown: the Krylov space became invariant.
    pub breakdown: bool,
    /// Least-squares residual estimate after every iteration.
    pub history: Vec<f64>,
}

/// A linear map on vectors of fixed length.
pub type LinearMap<'a> = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + 'a;

/// In-place projector on vectors.
pub type Projector<'a> = dyn Fn(&mut DVector<f64>) + 'a;

/// Optional hooks for [`gmres`].
#[derive(Default)]
pub struct GmresHooks<'a> {
    /// Right preconditioner `M⁻¹`.
    pub precond: Option<&'a LinearMap<'a>>,
    /// Projector applied to the right-hand side and every Krylov vector.
    pub project: Option<&'a Projector<'a>>,
}

/// Right-preconditioned restarted GMRES from a zero initial guess, with
/// modified Gram–Schmidt plus one reorthogonalization pass.
///
/// Stops when the residual drops below `max(rel_tol · ‖b‖, abs_tol)` or the
/// budget is spent.
pub fn gmres(
    apply: &LinearMap<'_>,
    rhs: &DVector<f64>,
    hooks: &GmresHooks<'_>,
    cfg: &KrylovConfig,
) -> Result<(DVector<f64>, KrylovStats)> {
    cfg.validate()?;
    let dim = rhs.len();
    let mut b = rhs.clone();
    if let Some(p) = hooks.project {
        p(&mut b);
    }
    let bnorm = b.norm();
    let mut x = DVector::zeros(dim);
    let mut stats = KrylovStats::default();
    if bnorm == 0.0 {
        stats.converged = true;
        return Ok((x, stats));
    }
    if !bnorm.is_finite() {
        return Err(Error::NumericalFailure {
            iter: 0,
            msg: "non-finite right-hand side".into(),
        });
    }
    let threshold = (cfg.rel_tol * bnorm).max(cfg.abs_tol);
    let cycle = cfg.restart.unwrap_or(cfg.max_iters).min(dim.max(1));
    let precondition = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let mut z = match hooks.precond {
            Some(m) => m(v)?,
            None => v.clone(),
        };
        if let Some(p) = hooks.project {
            p(&mut z);
        }
        Ok(z)
    };

    let mut residual = b.clone();
    let mut beta = bnorm;
    while stats.iters < cfg.max_iters && beta > threshold {
        let steps = cycle.min(cfg.max_iters - stats.iters);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps + 1);
        let mut zs: Vec<DVector<f64>> = Vec::with_capacity(steps);
        // Column-stored Hessenberg after rotation (upper triangular part).
        let mut rcols: Vec<Vec<f64>> = Vec::with_capacity(steps);
        let mut rot: Vec<(f64, f64)> = Vec::with_capacity(steps);
        let mut g = vec![0.0; steps + 1];
        g[0] = beta;
        basis.push(&residual / beta);
        let mut done = false;
        for j in 0..steps {
            let z = precondition(&basis[j])?;
            let mut w = apply(&z)?;
            if let Some(p) = hooks.project {
                p(&mut w);
            }
            let iter = stats.iters + 1;
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalFailure {
                    iter,
                    msg: "non-finite Krylov vector".into(),
                });
            }
            let wnorm0 = w.norm();
            let mut h = vec![0.0; j + 2];
            for _ in 0..2 {
                for (i, q) in basis.iter().enumerate() {
                    let c = q.dot(&w);
                    h[i] += c;
                    w.axpy(-c, q, 1.0);
                }
            }
            let hnext = w.norm();
            h[j + 1] = hnext;
            for (i, &(c, s)) in rot.iter().enumerate() {
                let (a, bb) = (h[i], h[i + 1]);
                h[i] = c * a + s * bb;
                h[i + 1] = -s * a + c * bb;
            }
            let (a, bb) = (h[j], h[j + 1]);
            let rho = a.hypot(bb);
            let (c, s) = if rho == 0.0 { (1.0, 0.0) } else { (a / rho, bb / rho) };
            h[j] = rho;
            h[j + 1] = 0.0;
            rot.push((c, s));
            g[j + 1] = -s * g[j];
            g[j] *= c;
            h.truncate(j + 1);
            rcols.push(h);
            zs.push(z);
            stats.iters = iter;
            let est = g[j + 1].abs();
            stats.history.push(est);
            let breakdown = hnext <= 1e-14 * wnorm0.max(f64::MIN_POSITIVE);
            if breakdown {
                stats.breakdown = true;
            }
            if breakdown || est <= threshold {
                done = true;
                break;
            }
            basis.push(w / hnext);
        }
        // Back substitution on the rotated triangle.
        let k = rcols.len();
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut acc = g[i];
            for (l, yl) in y.iter().enumerate().take(k).skip(i + 1) {
                acc -= rcols[l][i] * yl;
            }
            let d = rcols[i][i];
            y[i] = if d.abs() > f64::MIN_POSITIVE { acc / d } else { 0.0 };
        }
        for (zi, yi) in zs.iter().zip(&y) {
            x.axpy(*yi, zi, 1.0);
        }
        let ax = apply(&x)?;
        residual = &b - ax;
        if let Some(p) = hooks.project {
            p(&mut residual);
        }
        beta = residual.norm();
        if done {
            break;
        }
    }
    stats.final_relres = beta / bnorm;
    stats.converged = beta <= threshold * (1.0 + 1e-8);
    Ok((x, stats))
}
