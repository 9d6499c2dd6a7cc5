//! Dense assemblies of the projected objects, used as oracles and for exact
//! inner solves on small instances.

use nalgebra::{DMatrix, DVector};

use crate::correction::{ConditionReport, LocalSystem};
use crate::error::{Error, Result};
use crate::lowrank::hcat;
use crate::manifold::{FixedRankPoint, GaugeKind, LocalVector};
use crate::operator::KronSumOperator;

/// Largest local dimension for which the local operator is densified.
pub const EXACT_LOCAL_LIMIT: usize = 2000;

/// `E = [V ⊗ I_n | I_m ⊗ U | V ⊗ U]`, mapping local coordinates to `vec(U_ξVᵀ + UV_ξᵀ + US_ξVᵀ)`.
pub fn embedding_matrix(x: &FixedRankPoint) -> DMatrix<f64> {
    let (n, m) = (x.n(), x.m());
    let b1 = x.v().kronecker(&DMatrix::<f64>::identity(n, n));
    let b2 = DMatrix::<f64>::identity(m, m).kronecker(x.u());
    let b3 = x.v().kronecker(x.u());
    hcat(&[&b1, &b2, &b3])
}

/// Gauge matrix `blockdiag(I_r ⊗ U, V ⊗ I_r, vec S)`; the last column only for the sphere gauge.
pub fn gauge_matrix(x: &FixedRankPoint, gauge: GaugeKind) -> DMatrix<f64> {
    let (n, m, r) = (x.n(), x.m(), x.rank());
    let dim = x.local_dim();
    let cols = 2 * r * r + usize::from(gauge == GaugeKind::SphereIntersection);
    let mut b = DMatrix::zeros(dim, cols);
    b.view_mut((0, 0), (n * r, r * r))
        .copy_from(&DMatrix::<f64>::identity(r, r).kronecker(x.u()));
    b.view_mut((n * r, r * r), (m * r, r * r))
        .copy_from(&x.v().kronecker(&DMatrix::<f64>::identity(r, r)));
    if gauge == GaugeKind::SphereIntersection {
        let s = x.s_matrix();
        b.view_mut(((n + m) * r, 2 * r * r), (r * r, 1))
            .copy_from(&DMatrix::from_column_slice(r * r, 1, s.as_slice()));
    }
    b
}

/// Orthonormal completion: columns spanning the orthogonal complement of `q`'s range.
fn complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, k) = q.shape();
    let full = hcat(&[q, &DMatrix::identity(rows, rows)]).qr().q();
    full.columns(k, rows - k).into_owned()
}

/// Orthonormal basis of the gauge complement `{τ : Bᵀτ = 0}`.
pub fn complement_basis(x: &FixedRankPoint, gauge: GaugeKind) -> DMatrix<f64> {
    let (n, m, r) = (x.n(), x.m(), x.rank());
    let u_perp = complement(x.u());
    let v_perp = complement(x.v());
    let s_perp = match gauge {
        GaugeKind::SphereIntersection => complement(&DMatrix::from_column_slice(r * r, 1, x.s_matrix().as_slice())),
        GaugeKind::ManifoldOnly => DMatrix::identity(r * r, r * r),
    };
    let c1 = (n - r) * r;
    let c2 = (m - r) * r;
    let c3 = s_perp.ncols();
    let mut c = DMatrix::zeros(x.local_dim(), c1 + c2 + c3);
    let mut col = 0;
    for j in 0..r {
        for k in 0..n - r {
            for i in 0..n {
                c[(i + j * n, col)] = u_perp[(i, k)];
            }
            col += 1;
        }
    }
    for k in 0..m - r {
        for i in 0..r {
            for l in 0..m {
                c[(n * r + i + l * r, col)] = v_perp[(l, k)];
            }
            col += 1;
        }
    }
    c.view_mut(((n + m) * r, col), (r * r, c3)).copy_from(&s_perp);
    c
}

/// `Eᵀ (A − σ I) E` assembled from the densified operator.
pub fn local_operator_from_blocks(sys: &LocalSystem<'_>) -> Result<DMatrix<f64>> {
    let a = sys.operator().densify(false)?;
    let e = embedding_matrix(sys.point());
    let ete = e.transpose() * &e;
    Ok(e.transpose() * a * &e - ete * sys.shift())
}

fn check_local_size(sys: &LocalSystem<'_>) -> Result<()> {
    if sys.dim() > EXACT_LOCAL_LIMIT {
        return Err(Error::TooLarge {
            size: sys.dim(),
            limit: EXACT_LOCAL_LIMIT,
        });
    }
    Ok(())
}

/// `Cᵀ (A − σ I)_loc C` on the gauge complement basis `C`, built matrix-free.
pub fn reduced_local_operator(sys: &LocalSystem<'_>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_local_size(sys)?;
    let c = complement_basis(sys.point(), sys.gauge());
    let (n, m, r) = (sys.point().n(), sys.point().m(), sys.point().rank());
    let mut lc = DMatrix::zeros(c.nrows(), c.ncols());
    for j in 0..c.ncols() {
        let tau = LocalVector::from_data(c.column(j).into_owned(), n, m, r)?;
        lc.set_column(j, &sys.apply_unprojected(&tau).data);
    }
    Ok((c.transpose() * lc, c))
}

/// Solve the projected system exactly on the gauge complement.
pub fn solve_exact(sys: &LocalSystem<'_>, rhs: &LocalVector) -> Result<LocalVector> {
    let (k, c) = reduced_local_operator(sys)?;
    let b = c.transpose() * &rhs.data;
    let y = k
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Solver("projected local operator is singular".into()))?;
    let (n, m, r) = (sys.point().n(), sys.point().m(), sys.point().rank());
    LocalVector::from_data(c * y, n, m, r)
}

pub(crate) fn local_condition(sys: &LocalSystem<'_>) -> Result<ConditionReport> {
    let (k, _) = reduced_local_operator(sys)?;
    let (moduli, min_eig) = if sys.operator().symmetric_hint() {
        let sym = (&k + k.transpose()) * 0.5;
        let ev = sym.symmetric_eigenvalues();
        let min = ev.min();
        (ev.iter().map(|v| v.abs()).collect::<Vec<_>>(), min)
    } else {
        let ev = k.complex_eigenvalues();
        let min = ev.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        (ev.iter().map(|z| z.norm()).collect(), min)
    };
    let max = moduli.iter().copied().fold(0.0, f64::max);
    let kept: Vec<f64> = moduli.into_iter().filter(|&v| v > 1e-10 * max).collect();
    let smallest = kept.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConditionReport {
        kappa: if kept.is_empty() { f64::INFINITY } else { max / smallest },
        min_eig,
        max_abs_eig: max,
        rank: kept.len(),
    })
}

/// Dense `P_{T_X M_r}`.
pub fn tangent_projector(x: &FixedRankPoint) -> DMatrix<f64> {
    let (n, m) = (x.n(), x.m());
    let pu = x.u() * x.u().transpose();
    let pv = x.v() * x.v().transpose();
    let qu = DMatrix::identity(n, n) - &pu;
    let qv = DMatrix::identity(m, m) - &pv;
    pv.kronecker(&pu) + pv.kronecker(&qu) + qv.kronecker(&pu)
}

/// Dense `P_{T_X N} = P_{T_X M_r} − x xᵀ`.
pub fn intersection_projector(x: &FixedRankPoint) -> DMatrix<f64> {
    let xv = DVector::from_vec(x.to_vec());
    tangent_projector(x) - &xv * xv.transpose()
}

/// Minimum-norm solution of `P (A − θ I) P ξ = −P A x` with `P = P_{T_X N}`.
pub fn newton_pseudoinverse_solution(op: &KronSumOperator, x: &FixedRankPoint) -> Result<DVector<f64>> {
    let a = op.densify(false)?;
    let xv = DVector::from_vec(x.to_vec());
    let theta = xv.dot(&(&a * &xv));
    let p = intersection_projector(x);
    let dim = a.nrows();
    let m = &p * (a.clone() - DMatrix::identity(dim, dim) * theta) * &p;
    let rhs = -(&p * (&a * &xv));
    let tol = 1e-10 * m.norm();
    let pinv = m
        .pseudo_inverse(tol)
        .map_err(|e| Error::Solver(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gauge_and_complement_are_orthogonal_and_complete() {
        let x = FixedRankPoint::random(6, 5, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for gauge in [GaugeKind::ManifoldOnly, GaugeKind::SphereIntersection] {
            let b = gauge_matrix(&x, gauge);
            let c = complement_basis(&x, gauge);
            assert_eq!(b.ncols() + c.ncols(), x.local_dim());
            assert!((b.transpose() * &b - DMatrix::identity(b.ncols(), b.ncols())).norm() < 1e-12);
            assert!((c.transpose() * &c - DMatrix::identity(c.ncols(), c.ncols())).norm() < 1e-12);
            assert!((b.transpose() * &c).norm() < 1e-12);
        }
    }

    #[test]
    fn embedding_is_an_isometry_on_the_complement() {
        let x = FixedRankPoint::random(6, 6, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let c = complement_basis(&x, GaugeKind::SphereIntersection);
        let q = embedding_matrix(&x) * &c;
        assert!((q.transpose() * &q - DMatrix::identity(c.ncols(), c.ncols())).norm() < 1e-12);
        // Its range is the tangent space of the intersection.
        assert!((&q * q.transpose() - intersection_projector(&x)).norm() < 1e-12);
    }
}
