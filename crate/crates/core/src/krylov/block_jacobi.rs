//! Projected block-Jacobi preconditioner for the local systems.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::expsum::Eigen;
use super::{gmres, ExpSumPrecond, GmresHooks, KrylovConfig};
use crate::correction::{project_gauge_parts, LocalSystem};
use crate::error::{Error, Result};
use crate::manifold::{FixedRankPoint, GaugeKind, LocalVector};
use crate::operator::{BlockId, LocalBlock, LocalParts, ProjectedFactors};

/// Largest diagonal block that [`InnerStrategy::DenseSmall`] factorizes.
pub const DENSE_BLOCK_LIMIT: usize = 3000;

/// How the diagonal blocks `M_vv`, `M_uu` are inverted.
#[derive(Debug, Clone)]
pub enum InnerStrategy {
    /// Exponential-sum inverse of the Kronecker-sum symbol.
    ExpSum(Arc<ExpSumPrecond>),
    /// LU factorization of the exact dense block.
    DenseSmall,
    /// Inner GMRES on the exact block.
    InnerKrylov(KrylovConfig),
}

enum Side<'a> {
    ExpSum {
        pre: Arc<ExpSumPrecond>,
        small: Eigen,
    },
    Dense(LU<f64, Dyn, Dyn>),
    Krylov {
        factors: ProjectedFactors<'a>,
        cfg: KrylovConfig,
    },
}

/// Constrained block solve `P⊥ M P⊥ y = P⊥ z` with `(I ⊗ Uᵀ) y = 0` (resp. the `V` side).
struct ConstrainedBlock<'a> {
    block: LocalBlock,
    side: Side<'a>,
    shift: f64,
    /// `M⁻¹` applied to the constraint columns, one matrix per column.
    captured: Vec<DMatrix<f64>>,
    capture_lu: LU<f64, Dyn, Dyn>,
}

/// `blockdiag(M_vv, M_uu, M_{vu,vu})⁻¹` with each block solved under its gauge constraint.
pub struct BlockJacobi<'a> {
    x: FixedRankPoint,
    gauge: GaugeKind,
    v_block: ConstrainedBlock<'a>,
    u_block: ConstrainedBlock<'a>,
    s_lu: LU<f64, Dyn, Dyn>,
    /// `M_s⁻¹ vec S` and `sᵀ M_s⁻¹ s`, for the sphere constraint.
    s_capture: Option<(DVector<f64>, f64)>,
}

impl std::fmt::Debug for BlockJacobi<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlockJacobi")
            .field("gauge", &self.gauge)
            .field("rank", &self.x.rank())
            .finish_non_exhaustive()
    }
}

impl<'a> Side<'a> {
    fn solve(&self, block: LocalBlock, shift: f64, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Side::ExpSum { pre, small } => Ok(match block {
                LocalBlock::V => pre.sylvester(pre.g_eigen(), small, z),
                _ => pre.sylvester(small, pre.f_eigen(), z),
            }),
            Side::Dense(lu) => {
                let b = DVector::from_column_slice(z.as_slice());
                let y = lu
                    .solve(&b)
                    .ok_or_else(|| Error::Preconditioner("singular diagonal block".into()))?;
                Ok(DMatrix::from_column_slice(z.nrows(), z.ncols(), y.as_slice()))
            }
            Side::Krylov { factors, cfg } => {
                let (rows, cols) = z.shape();
                let id = BlockId::new(block, block);
                let apply = |w: &DVector<f64>| -> Result<DVector<f64>> {
                    let wm = DMatrix::from_column_slice(rows, cols, w.as_slice());
                    let out = factors.apply_block_matrix(id, &wm)? - wm * shift;
                    Ok(DVector::from_column_slice(out.as_slice()))
                };
                let b = DVector::from_column_slice(z.as_slice());
                let (y, _) = gmres(&apply, &b, &GmresHooks::default(), cfg)?;
                Ok(DMatrix::from_column_slice(rows, cols, y.as_slice()))
            }
        }
    }
}

fn dense_block(factors: &ProjectedFactors<'_>, block: LocalBlock, shift: f64) -> Result<LU<f64, Dyn, Dyn>> {
    let op = factors.operator();
    let r = factors.rank();
    let size = block.len(op.n(), op.m(), r);
    if size > DENSE_BLOCK_LIMIT {
        return Err(Error::Preconditioner(format!(
            "diagonal block of size {size} exceeds the dense limit {DENSE_BLOCK_LIMIT}"
        )));
    }
    let mut m = DMatrix::zeros(size, size);
    for (k, t) in op.terms().iter().enumerate() {
        match block {
            // vec(G W f̂) = (f̂ᵀ ⊗ G) vec W
            LocalBlock::V => m += factors.f_hat()[k].transpose().kronecker(&t.g.to_dense()),
            // vec(ĝ M Fᵀ) = (F ⊗ ĝ) vec M
            LocalBlock::U => m += t.f.to_dense().kronecker(&factors.g_hat()[k]),
            LocalBlock::Vu => m += factors.f_hat()[k].transpose().kronecker(&factors.g_hat()[k]),
        }
    }
    m -= DMatrix::identity(size, size) * shift;
    Ok(m.lu())
}

impl<'a> ConstrainedBlock<'a> {
    fn new(sys: &LocalSystem<'a>, block: LocalBlock, strategy: &InnerStrategy, shift: f64) -> Result<Self> {
        let x = sys.point();
        let factors = sys.factors();
        let r = x.rank();
        let side = match strategy {
            InnerStrategy::ExpSum(pre) => {
                if (pre.shift() - shift).abs() > 0.0 {
                    return Err(Error::Preconditioner(format!(
                        "exp-sum built for shift {} but block-Jacobi shift is {shift}",
                        pre.shift()
                    )));
                }
                let (fe, ge) = (pre.f_eigen(), pre.g_eigen());
                if fe.values.len() != x.m() || ge.values.len() != x.n() {
                    return Err(Error::Preconditioner("symbol size does not match the operator".into()));
                }
                // Project the symbol factor that is not kept whole onto the point's basis.
                let small = match block {
                    LocalBlock::V => {
                        let qv = fe.vectors.transpose() * x.v();
                        qv.transpose() * DMatrix::from_diagonal(&fe.values) * qv
                    }
                    _ => {
                        let qu = ge.vectors.transpose() * x.u();
                        qu.transpose() * DMatrix::from_diagonal(&ge.values) * qu
                    }
                };
                Side::ExpSum {
                    pre: pre.clone(),
                    small: Eigen::of(&small),
                }
            }
            InnerStrategy::DenseSmall => Side::Dense(dense_block(factors, block, shift)?),
            InnerStrategy::InnerKrylov(cfg) => Side::Krylov {
                factors: factors.clone(),
                cfg: cfg.clone(),
            },
        };
        let mut captured = Vec::with_capacity(r * r);
        let mut cap = DMatrix::zeros(r * r, r * r);
        for j in 0..r {
            for i in 0..r {
                let e = match block {
                    // (I_r ⊗ U) e_{jr+i} = vec(u_i e_jᵀ)
                    LocalBlock::V => {
                        let mut e = DMatrix::zeros(x.n(), r);
                        e.set_column(j, &x.u().column(i));
                        e
                    }
                    // (V ⊗ I_r) e_{jr+i} = vec(e_i v_jᵀ)
                    _ => {
                        let mut e = DMatrix::zeros(r, x.m());
                        e.set_row(i, &x.v().column(j).transpose());
                        e
                    }
                };
                let w = side.solve(block, shift, &e)?;
                let c = constraint(x, block, &w);
                cap.set_column(j * r + i, &DVector::from_column_slice(c.as_slice()));
                captured.push(w);
            }
        }
        let capture_lu = cap.lu();
        if !capture_lu.is_invertible() || !capture_lu.u().diagonal().iter().all(|d| d.abs() > 1e-300) {
            return Err(Error::Preconditioner(format!(
                "singular capture matrix in block {block}"
            )));
        }
        Ok(Self {
            block,
            side,
            shift,
            captured,
            capture_lu,
        })
    }

    fn apply(&self, x: &FixedRankPoint, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut y = self.side.solve(self.block, self.shift, z)?;
        let c = constraint(x, self.block, &y);
        let lambda = self
            .capture_lu
            .solve(&DVector::from_column_slice(c.as_slice()))
            .ok_or_else(|| Error::Preconditioner("singular capture matrix".into()))?;
        for (w, l) in self.captured.iter().zip(lambda.iter()) {
            y -= w * *l;
        }
        Ok(y)
    }
}

/// `(I ⊗ Uᵀ) vec W = vec(Uᵀ W)` for the v side, `(Vᵀ ⊗ I) vec W = vec(W V)` for the u side.
fn constraint(x: &FixedRankPoint, block: LocalBlock, w: &DMatrix<f64>) -> DMatrix<f64> {
    match block {
        LocalBlock::V => x.u().transpose() * w,
        _ => w * x.v(),
    }
}

impl<'a> BlockJacobi<'a> {
    /// Build for the system's point and gauge; `shift` is subtracted from every block.
    pub fn new(sys: &LocalSystem<'a>, strategy: &InnerStrategy, shift: f64) -> Result<Self> {
        let x = sys.point().clone();
        let gauge = sys.gauge();
        let v_block = ConstrainedBlock::new(sys, LocalBlock::V, strategy, shift)?;
        let u_block = ConstrainedBlock::new(sys, LocalBlock::U, strategy, shift)?;
        let s_lu = dense_block(sys.factors(), LocalBlock::Vu, shift)?;
        let s_capture = if gauge == GaugeKind::SphereIntersection {
            let s = DVector::from_column_slice(x.s_matrix().as_slice());
            let ms = s_lu
                .solve(&s)
                .ok_or_else(|| Error::Preconditioner("singular (vu,vu) block".into()))?;
            let denom = s.dot(&ms);
            if denom.abs() < 1e-300 || !denom.is_finite() {
                return Err(Error::Preconditioner("degenerate sphere constraint".into()));
            }
            Some((ms, denom))
        } else {
            None
        };
        Ok(Self {
            x,
            gauge,
            v_block,
            u_block,
            s_lu,
            s_capture,
        })
    }

    pub fn apply(&self, z: &LocalVector) -> Result<LocalVector> {
        let mut p = z.to_parts();
        project_gauge_parts(&self.x, &mut p, self.gauge);
        let u_xi = self.v_block.apply(&self.x, &p.u_xi)?;
        let vt_xi = self.u_block.apply(&self.x, &p.vt_xi)?;
        let zs = DVector::from_column_slice(p.s_xi.as_slice());
        let mut ys = self
            .s_lu
            .solve(&zs)
            .ok_or_else(|| Error::Preconditioner("singular (vu,vu) block".into()))?;
        if let Some((ms, denom)) = &self.s_capture {
            let s = DVector::from_column_slice(self.x.s_matrix().as_slice());
            let lambda = s.dot(&ys) / denom;
            ys -= ms * lambda;
        }
        let r = self.x.rank();
        let mut out = LocalParts {
            u_xi,
            vt_xi,
            s_xi: DMatrix::from_column_slice(r, r, ys.as_slice()),
        };
        project_gauge_parts(&self.x, &mut out, self.gauge);
        Ok(LocalVector::from_parts(&out))
    }
}
