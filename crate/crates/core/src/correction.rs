//! Local correction systems in tangent coordinates.

use nalgebra::DVector;

use crate::dense;
use crate::error::{check_len, Error, Result};
use crate::krylov::{gmres, BlockJacobi, GmresHooks, KrylovConfig, KrylovStats};
use crate::manifold::{point_local, FixedRankPoint, GaugeKind, LocalVector, TangentVector};
use crate::operator::{KronSumOperator, LocalParts, ProjectedFactors};

/// Which correction equation to set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionVariant {
    /// Newton-type correction, orthogonal to the current iterate.
    JacobiDavidson,
    /// Correction without the rank-one sphere projector.
    Davidson,
    /// Tangent-constrained inverse iteration: the solution replaces the iterate.
    Rqi,
}

impl CorrectionVariant {
    pub fn gauge(self) -> GaugeKind {
        match self {
            CorrectionVariant::JacobiDavidson => GaugeKind::SphereIntersection,
            CorrectionVariant::Davidson | CorrectionVariant::Rqi => GaugeKind::ManifoldOnly,
        }
    }
}

/// `(I − B Bᵀ) τ` for the gauge matrix `B = blockdiag(I_r ⊗ U, V ⊗ I_r, vec S)`
/// (the last block only for [`GaugeKind::SphereIntersection`]).
pub fn project_gauge_parts(x: &FixedRankPoint, p: &mut LocalParts, gauge: GaugeKind) {
    let a = x.u().transpose() * &p.u_xi;
    p.u_xi -= x.u() * a;
    let b = &p.vt_xi * x.v();
    p.vt_xi -= b * x.v().transpose();
    if gauge == GaugeKind::SphereIntersection {
        let s = x.s_matrix();
        let c = p.s_xi.dot(&s);
        p.s_xi -= s * c;
    }
}

/// `(I − B Bᵀ) τ` with the full three-block gauge matrix.
pub fn apply_gauge_projector(x: &FixedRankPoint, tau: &LocalVector) -> Result<LocalVector> {
    apply_gauge_projector_with(x, tau, GaugeKind::SphereIntersection)
}

pub fn apply_gauge_projector_with(x: &FixedRankPoint, tau: &LocalVector, gauge: GaugeKind) -> Result<LocalVector> {
    check_len("local vector", x.local_dim(), tau.len())?;
    let mut p = tau.to_parts();
    project_gauge_parts(x, &mut p, gauge);
    Ok(LocalVector::from_parts(&p))
}

/// `g = Eᵀ A x = [A X V; Uᵀ A X; Uᵀ A X V]`.
pub fn local_rhs(op: &KronSumOperator, x: &FixedRankPoint) -> Result<LocalVector> {
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    Ok(rhs_from_factors(&pf, x))
}

fn rhs_from_factors(pf: &ProjectedFactors<'_>, x: &FixedRankPoint) -> LocalVector {
    let s = x.s_matrix();
    let mut p = LocalParts::zeros(x.n(), x.m(), x.rank());
    for k in 0..pf.gu().len() {
        let (gu, fv, gh, fh) = (&pf.gu()[k], &pf.fv()[k], &pf.g_hat()[k], &pf.f_hat()[k]);
        p.u_xi += gu * &s * fh;
        p.vt_xi += gh * &s * fv.transpose();
        p.s_xi += gh * &s * fh;
    }
    LocalVector::from_parts(&p)
}

/// The same vector assembled from diagonal blocks:
/// `[A_{v,v} vec(U S); A_{u,u} vec(S Vᵀ); A_{vu,vu} vec(S)]`.
pub fn local_rhs_blockwise(op: &KronSumOperator, x: &FixedRankPoint) -> Result<LocalVector> {
    use crate::operator::{BlockId, LocalBlock::*};
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    let s = x.s_matrix();
    Ok(LocalVector::from_parts(&LocalParts {
        u_xi: pf.apply_block_matrix(BlockId::new(V, V), &(x.u() * &s))?,
        vt_xi: pf.apply_block_matrix(BlockId::new(U, U), &(&s * x.v().transpose()))?,
        s_xi: pf.apply_block_matrix(BlockId::new(Vu, Vu), &s)?,
    }))
}

/// Statistics of one inner solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InnerStats {
    pub krylov: KrylovStats,
    /// The block-Jacobi preconditioner was requested but could not be built.
    pub precond_fallback: bool,
    /// Solved by a dense factorization on the gauge complement.
    pub exact: bool,
}

/// How to solve the local system.
#[derive(Debug, Clone, Copy, Default)]
pub enum InnerSolve<'p> {
    #[default]
    Gmres,
    Preconditioned(&'p BlockJacobi<'p>),
    /// Dense factorization on the gauge complement (small instances only).
    Exact,
}

/// The projected local system at one point, for one variant.
#[derive(Debug, Clone)]
pub struct LocalSystem<'a> {
    point: FixedRankPoint,
    factors: ProjectedFactors<'a>,
    shift: f64,
    rq: f64,
    g: LocalVector,
    variant: CorrectionVariant,
}

impl<'a> LocalSystem<'a> {
    /// Shift by the Rayleigh quotient of `x`.
    pub fn new(op: &'a KronSumOperator, x: &FixedRankPoint, variant: CorrectionVariant) -> Result<Self> {
        let factors = ProjectedFactors::new(op, x.u(), x.v())?;
        let shift = factors.quadratic_form(&x.s_matrix());
        let g = rhs_from_factors(&factors, x);
        Ok(Self {
            point: x.clone(),
            factors,
            shift,
            rq: shift,
            g,
            variant,
        })
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn point(&self) -> &FixedRankPoint {
        &self.point
    }

    pub fn operator(&self) -> &'a KronSumOperator {
        self.factors.operator()
    }

    pub fn factors(&self) -> &ProjectedFactors<'a> {
        &self.factors
    }

    /// Rayleigh quotient of the point.
    pub fn rayleigh_quotient(&self) -> f64 {
        self.rq
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn variant(&self) -> CorrectionVariant {
        self.variant
    }

    pub fn gauge(&self) -> GaugeKind {
        self.variant.gauge()
    }

    pub fn dim(&self) -> usize {
        self.point.local_dim()
    }

    /// The unprojected vector `g = Eᵀ A x`.
    pub fn g(&self) -> &LocalVector {
        &self.g
    }

    pub fn project_parts(&self, p: &mut LocalParts) {
        project_gauge_parts(&self.point, p, self.gauge());
    }

    pub fn project(&self, tau: &LocalVector) -> LocalVector {
        let mut p = tau.to_parts();
        self.project_parts(&mut p);
        LocalVector::from_parts(&p)
    }

    /// `(A − σ I)_loc τ = Eᵀ (A − σ I) E τ` without gauge projection.
    pub fn apply_unprojected(&self, tau: &LocalVector) -> LocalVector {
        LocalVector::from_parts(&self.apply_parts(&tau.to_parts()))
    }

    fn apply_parts(&self, p: &LocalParts) -> LocalParts {
        let mut out = self.factors.apply_local(p);
        if self.shift != 0.0 {
            let gram = self.factors.apply_gram(p);
            out.u_xi -= gram.u_xi * self.shift;
            out.vt_xi -= gram.vt_xi * self.shift;
            out.s_xi -= gram.s_xi * self.shift;
        }
        out
    }

    /// `(I − BBᵀ)(A − σ I)_loc (I − BBᵀ) τ` with the variant's gauge.
    pub fn apply(&self, tau: &LocalVector) -> LocalVector {
        let mut p = tau.to_parts();
        self.project_parts(&mut p);
        let mut out = self.apply_parts(&p);
        self.project_parts(&mut out);
        LocalVector::from_parts(&out)
    }

    /// Right-hand side handed to the solver.
    pub fn rhs(&self) -> LocalVector {
        match self.variant {
            CorrectionVariant::JacobiDavidson => {
                let mut p = self.g.to_parts();
                self.project_parts(&mut p);
                negate(LocalVector::from_parts(&p))
            }
            CorrectionVariant::Davidson => {
                let mut p = self.g.to_parts();
                self.project_parts(&mut p);
                p.s_xi -= self.point.s_matrix() * self.rq;
                negate(LocalVector::from_parts(&p))
            }
            CorrectionVariant::Rqi => point_local(&self.point),
        }
    }

    fn wrap(&self, data: DVector<f64>) -> LocalVector {
        let (n, m, r) = (self.point.n(), self.point.m(), self.point.rank());
        LocalVector::from_data(data, n, m, r).expect("solver keeps the local length")
    }

    /// Solve the projected local system and return the correction (or, for
    /// [`CorrectionVariant::Rqi`], the new unnormalized iterate) as a tangent
    /// vector with the variant's gauge.
    pub fn solve(&self, cfg: &KrylovConfig, how: InnerSolve<'_>) -> Result<(TangentVector, InnerStats)> {
        let rhs = self.rhs();
        let mut stats = InnerStats::default();
        let tau = match how {
            InnerSolve::Exact => {
                stats.exact = true;
                stats.krylov.converged = true;
                dense::solve_exact(self, &rhs)?
            }
            InnerSolve::Gmres | InnerSolve::Preconditioned(_) => {
                let apply = |v: &DVector<f64>| Ok(self.apply(&self.wrap(v.clone())).data);
                let project = |v: &mut DVector<f64>| {
                    let p = self.project(&self.wrap(std::mem::take(v)));
                    *v = p.data;
                };
                let pre = |v: &DVector<f64>| -> Result<DVector<f64>> {
                    match how {
                        InnerSolve::Preconditioned(bj) => Ok(bj.apply(&self.wrap(v.clone()))?.data),
                        _ => Ok(v.clone()),
                    }
                };
                let hooks = GmresHooks {
                    precond: match how {
                        InnerSolve::Preconditioned(_) => Some(&pre),
                        _ => None,
                    },
                    project: Some(&project),
                };
                let (sol, ks) = gmres(&apply, &rhs.data, &hooks, cfg)?;
                stats.krylov = ks;
                self.wrap(sol)
            }
        };
        let mut t = TangentVector::from_local(&self.project(&tau), self.gauge());
        if t.u_xi
            .iter()
            .chain(t.v_xi.iter())
            .chain(t.s_xi.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NumericalFailure {
                iter: stats.krylov.iters,
                msg: "non-finite correction".into(),
            });
        }
        t.gauge = self.gauge();
        Ok((t, stats))
    }
}

fn negate(mut v: LocalVector) -> LocalVector {
    v.data.neg_mut();
    v
}

/// `(A − σ I)_loc τ` for a system (no projection), as a free function.
pub fn apply_local_operator(sys: &LocalSystem<'_>, tau: &LocalVector) -> Result<LocalVector> {
    check_len("local vector", sys.dim(), tau.len())?;
    Ok(sys.apply_unprojected(tau))
}

/// Spectrum summary of the projected local operator on the gauge complement.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub kappa: f64,
    /// Smallest eigenvalue (real part; exact for symmetric operators).
    pub min_eig: f64,
    pub max_abs_eig: f64,
    /// Number of eigenvalues above the cutoff, i.e. the complement dimension.
    pub rank: usize,
}

/// Condition number of the projected local operator; densifies, so the
/// local dimension must not exceed [`dense::EXACT_LOCAL_LIMIT`].
pub fn estimate_local_condition(sys: &LocalSystem<'_>) -> Result<ConditionReport> {
    dense::local_condition(sys)
}
