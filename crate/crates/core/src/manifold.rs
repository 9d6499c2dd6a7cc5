//! Geometry of unit-norm, fixed-rank matrices `X = U diag(s) Vᵀ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_len, Error, Result};
use crate::lowrank::{hcat, orthonormality_defect, sorted_svd, thin_qr, LowRank};
use crate::operator::{KronSumOperator, LocalParts, ProjectedFactors, ORTHO_TOL};

/// Retraction fails when `σ_r < RANK_CUTOFF · σ_1`.
pub const RANK_CUTOFF: f64 = 1e-14;

/// Point on the unit sphere of rank-`r` matrices, stored in SVD form.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedRankPoint {
    u: DMatrix<f64>,
    s: DVector<f64>,
    v: DMatrix<f64>,
}

impl FixedRankPoint {
    /// Validate orthonormal factors, a decreasing positive spectrum and `‖s‖ = 1`.
    pub fn new(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        check_len("singular values", u.ncols(), s.len())?;
        check_len("right factor columns", u.ncols(), v.ncols())?;
        if s.is_empty() {
            return Err(Error::Precondition("rank must be at least 1".into()));
        }
        for (name, q) in [("U", &u), ("V", &v)] {
            let d = orthonormality_defect(q);
            if !(d <= ORTHO_TOL) {
                return Err(Error::Precondition(format!("{name} not orthonormal ({d:e})")));
            }
        }
        if !((s.norm() - 1.0).abs() <= 1e-12) {
            return Err(Error::Precondition(format!("‖S‖_F = {} ≠ 1", s.norm())));
        }
        if s.iter().any(|&x| !(x > 0.0)) || s.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Precondition(
                "singular values must be positive and nonincreasing".into(),
            ));
        }
        Ok(Self { u, s, v })
    }

    /// Seeded random point: Gaussian factors, QR-orthonormalized, `S = I/√r`.
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, r: usize, rng: &mut R) -> Result<Self> {
        if r == 0 || r > n.min(m) {
            return Err(Error::Precondition(format!("rank {r} must lie in 1..={}", n.min(m))));
        }
        let mut draw = |rows: usize| DMatrix::from_fn(rows, r, |_, _| StandardNormal.sample(&mut *rng));
        let gu = draw(n);
        let gv = draw(m);
        let u = thin_qr(&gu).0;
        let v = thin_qr(&gv).0;
        let s = DVector::from_element(r, 1.0 / (r as f64).sqrt());
        let s = &s / s.norm();
        Ok(Self { u, s, v })
    }

    /// Best rank-`r` unit-norm approximation of `left · core · rightᵀ`.
    pub fn from_factored(left: &DMatrix<f64>, core: &DMatrix<f64>, right: &DMatrix<f64>, r: usize) -> Result<Self> {
        let (ql, rl) = thin_qr(left);
        let (qr, rr) = thin_qr(right);
        let small = rl * core * rr.transpose();
        let svd = sorted_svd(&small);
        if svd.s.len() < r {
            return Err(Error::Precondition(format!(
                "factored input has width {} < rank {r}",
                svd.s.len()
            )));
        }
        let top = svd.s[0];
        let ratio = if top > 0.0 { svd.s[r - 1] / top } else { 0.0 };
        if !(ratio >= RANK_CUTOFF) {
            return Err(Error::RankDegeneracy { ratio });
        }
        let u = ql * svd.u.columns(0, r);
        let v = qr * svd.v.columns(0, r);
        let s = DVector::from_iterator(r, svd.s[..r].iter().copied());
        let s = &s / s.norm();
        let mut p = Self { u, s, v };
        p.fix_signs();
        Ok(p)
    }

    /// Best rank-`r` unit-norm approximation of a dense `n × m` matrix.
    pub fn from_dense(z: &DMatrix<f64>, r: usize) -> Result<Self> {
        let (n, m) = z.shape();
        Self::from_factored(&DMatrix::identity(n, n), z, &DMatrix::identity(m, m), r)
    }

    /// Flip `(u_i, v_i)` pairs so the largest-magnitude entry of each `u_i` is positive.
    fn fix_signs(&mut self) {
        for i in 0..self.rank() {
            let col = self.u.column(i);
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if pivot < 0.0 {
                self.u.column_mut(i).neg_mut();
                self.v.column_mut(i).neg_mut();
            }
        }
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.s
    }

    pub fn s_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.s)
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn local_dim(&self) -> usize {
        (self.n() + self.m()) * self.rank() + self.rank() * self.rank()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.u * self.s_matrix() * self.v.transpose()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.to_dense().as_slice().to_vec()
    }

    pub fn as_lowrank(&self) -> LowRank {
        LowRank {
            left: &self.u * self.s_matrix(),
            right: self.v.clone(),
        }
    }

    /// `min_s ‖X − s Y‖_F` over `s = ±1`; zero when the points coincide up to sign.
    pub fn distance_up_to_sign(&self, other: &FixedRankPoint) -> f64 {
        let a = self.as_lowrank();
        let b = other.as_lowrank();
        let plus = a.plus(&b.clone()).norm();
        let minus = a.plus(&b.scale(-1.0)).norm();
        plus.min(minus)
    }
}

/// Which gauge a tangent vector satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GaugeKind {
    /// `UᵀU_ξ = 0`, `VᵀV_ξ = 0`: a tangent vector of the rank-`r` manifold.
    ManifoldOnly,
    /// Additionally `⟨S_ξ, S⟩ = 0`: tangent to the unit-norm intersection.
    SphereIntersection,
}

/// Tangent vector `U_ξ Vᵀ + U V_ξᵀ + U S_ξ Vᵀ` at a given point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub u_xi: DMatrix<f64>,
    pub v_xi: DMatrix<f64>,
    pub s_xi: DMatrix<f64>,
    pub gauge: GaugeKind,
}

impl TangentVector {
    pub fn zeros(x: &FixedRankPoint, gauge: GaugeKind) -> Self {
        let (n, m, r) = (x.n(), x.m(), x.rank());
        Self {
            u_xi: DMatrix::zeros(n, r),
            v_xi: DMatrix::zeros(m, r),
            s_xi: DMatrix::zeros(r, r),
            gauge,
        }
    }

    /// Embedded representative as a rank-`2r` factorization
    /// `[U_ξ  U] [V  V_ξ + V S_ξᵀ]ᵀ`.
    pub fn embed(&self, x: &FixedRankPoint) -> LowRank {
        LowRank {
            left: hcat(&[&self.u_xi, x.u()]),
            right: hcat(&[x.v(), &(&self.v_xi + x.v() * self.s_xi.transpose())]),
        }
    }

    pub fn to_dense(&self, x: &FixedRankPoint) -> DMatrix<f64> {
        self.embed(x).to_dense()
    }

    pub fn to_vec(&self, x: &FixedRankPoint) -> Vec<f64> {
        self.to_dense(x).as_slice().to_vec()
    }

    /// Inner product of the embedded vectors; exact when both satisfy the gauge.
    pub fn inner(&self, other: &TangentVector) -> f64 {
        self.u_xi.dot(&other.u_xi) + self.v_xi.dot(&other.v_xi) + self.s_xi.dot(&other.s_xi)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            u_xi: &self.u_xi * alpha,
            v_xi: &self.v_xi * alpha,
            s_xi: &self.s_xi * alpha,
            gauge: self.gauge,
        }
    }

    /// `self + alpha · other`.
    pub fn axpy(&self, alpha: f64, other: &TangentVector) -> Self {
        Self {
            u_xi: &self.u_xi + &other.u_xi * alpha,
            v_xi: &self.v_xi + &other.v_xi * alpha,
            s_xi: &self.s_xi + &other.s_xi * alpha,
            gauge: if self.gauge == other.gauge {
                self.gauge
            } else {
                GaugeKind::ManifoldOnly
            },
        }
    }

    pub fn is_zero(&self) -> bool {
        self.u_xi
            .iter()
            .chain(self.v_xi.iter())
            .chain(self.s_xi.iter())
            .all(|&v| v == 0.0)
    }

    /// Largest violation among `‖UᵀU_ξ‖`, `‖VᵀV_ξ‖` and, for the sphere gauge, `|⟨S_ξ, S⟩|`.
    pub fn gauge_defect(&self, x: &FixedRankPoint) -> f64 {
        let a = (x.u().transpose() * &self.u_xi).norm();
        let b = (x.v().transpose() * &self.v_xi).norm();
        let c = match self.gauge {
            GaugeKind::ManifoldOnly => 0.0,
            GaugeKind::SphereIntersection => self.s_xi.dot(&x.s_matrix()).abs(),
        };
        a.max(b).max(c)
    }

    /// One Gram–Schmidt pass against `U`, `V` (moving the removed parts into
    /// `S_ξ`, so the embedded vector is unchanged) and, for the sphere gauge, `S`.
    pub fn enforce_gauge(&mut self, x: &FixedRankPoint) {
        let a = x.u().transpose() * &self.u_xi;
        self.u_xi -= x.u() * &a;
        self.s_xi += a;
        let b = x.v().transpose() * &self.v_xi;
        self.v_xi -= x.v() * &b;
        self.s_xi += b.transpose();
        if self.gauge == GaugeKind::SphereIntersection {
            let s = x.s_matrix();
            let c = self.s_xi.dot(&s);
            self.s_xi -= s * c;
        }
    }

    pub fn to_local(&self) -> LocalVector {
        LocalVector::from_parts(&LocalParts {
            u_xi: self.u_xi.clone(),
            vt_xi: self.v_xi.transpose(),
            s_xi: self.s_xi.clone(),
        })
    }

    pub fn from_local(tau: &LocalVector, gauge: GaugeKind) -> Self {
        let p = tau.to_parts();
        Self {
            u_xi: p.u_xi,
            v_xi: p.vt_xi.transpose(),
            s_xi: p.s_xi,
            gauge,
        }
    }
}

/// Flat coordinates `[vec U_ξ | vec V_ξᵀ | vec S_ξ]` of length `(n + m) r + r²`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalVector {
    pub data: DVector<f64>,
    n: usize,
    m: usize,
    r: usize,
}

impl LocalVector {
    pub fn zeros(n: usize, m: usize, r: usize) -> Self {
        Self {
            data: DVector::zeros((n + m) * r + r * r),
            n,
            m,
            r,
        }
    }

    pub fn from_data(data: DVector<f64>, n: usize, m: usize, r: usize) -> Result<Self> {
        check_len("local vector", (n + m) * r + r * r, data.len())?;
        Ok(Self { data, n, m, r })
    }

    pub fn from_parts(p: &LocalParts) -> Self {
        let (n, r) = p.u_xi.shape();
        let m = p.vt_xi.ncols();
        let mut data = Vec::with_capacity((n + m) * r + r * r);
        data.extend_from_slice(p.u_xi.as_slice());
        data.extend_from_slice(p.vt_xi.as_slice());
        data.extend_from_slice(p.s_xi.as_slice());
        Self {
            data: DVector::from_vec(data),
            n,
            m,
            r,
        }
    }

    pub fn to_parts(&self) -> LocalParts {
        let (n, m, r) = (self.n, self.m, self.r);
        let d = self.data.as_slice();
        let (b1, b2) = (n * r, n * r + m * r);
        LocalParts {
            u_xi: DMatrix::from_column_slice(n, r, &d[..b1]),
            vt_xi: DMatrix::from_column_slice(r, m, &d[b1..b2]),
            s_xi: DMatrix::from_column_slice(r, r, &d[b2..]),
        }
    }

    /// Partition boundaries `(n r, n r + m r)`.
    pub fn boundaries(&self) -> (usize, usize) {
        (self.n * self.r, (self.n + self.m) * self.r)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.r)
    }

    pub fn norm(&self) -> f64 {
        self.data.norm()
    }
}

/// Coordinates of the point itself: `[0; 0; vec S]`.
pub fn point_local(x: &FixedRankPoint) -> LocalVector {
    let mut parts = LocalParts::zeros(x.n(), x.m(), x.rank());
    parts.s_xi = x.s_matrix();
    LocalVector::from_parts(&parts)
}

fn tangent_from_sides(x: &FixedRankPoint, zv: DMatrix<f64>, utz: DMatrix<f64>, gauge: GaugeKind) -> TangentVector {
    // zv = Z V (n×r), utz = Uᵀ Z (r×m).
    let s_xi = x.u().transpose() * &zv;
    let u_xi = zv - x.u() * &s_xi;
    let v_xi = utz.transpose() - x.v() * s_xi.transpose();
    let mut t = TangentVector {
        u_xi,
        v_xi,
        s_xi,
        gauge: GaugeKind::ManifoldOnly,
    };
    if gauge == GaugeKind::SphereIntersection {
        let s = x.s_matrix();
        let c = t.s_xi.dot(&s);
        t.s_xi -= s * c;
        t.gauge = gauge;
    }
    t
}

/// Orthogonal projection of a length-`nm` vector onto the tangent space of
/// the rank-`r` manifold at `x`.
pub fn project_to_mr_tangent(x: &FixedRankPoint, z: &[f64]) -> Result<TangentVector> {
    project_dense(x, z, GaugeKind::ManifoldOnly)
}

/// Projection onto the tangent space of the unit-norm intersection at `x`:
/// `P_{T_X M_r} z − ⟨x, z⟩ x`.
pub fn project_to_n_tangent(x: &FixedRankPoint, z: &[f64]) -> Result<TangentVector> {
    project_dense(x, z, GaugeKind::SphereIntersection)
}

fn project_dense(x: &FixedRankPoint, z: &[f64], gauge: GaugeKind) -> Result<TangentVector> {
    check_len("ambient vector", x.n() * x.m(), z.len())?;
    let zm = DMatrix::from_column_slice(x.n(), x.m(), z);
    let zv = &zm * x.v();
    let utz = x.u().transpose() * &zm;
    Ok(tangent_from_sides(x, zv, utz, gauge))
}

/// Projection of a factored matrix `L Rᵀ` without forming it.
pub fn project_lowrank(x: &FixedRankPoint, z: &LowRank, gauge: GaugeKind) -> Result<TangentVector> {
    check_len("low-rank rows", x.n(), z.nrows())?;
    check_len("low-rank cols", x.m(), z.ncols())?;
    let rtv = z.right.transpose() * x.v();
    let ltu = z.left.transpose() * x.u();
    let zv = &z.left * rtv;
    let utz = ltu.transpose() * z.right.transpose();
    Ok(tangent_from_sides(x, zv, utz, gauge))
}

/// `R(x + α ξ)`: QR of `[U U_ξ]`, `[V V_ξ]`, rank-`r` SVD of the `2r × 2r`
/// core `[[S + α S_ξ, α I], [α I, 0]]`, then normalization.
pub fn retract(x: &FixedRankPoint, xi: &TangentVector, alpha: f64) -> Result<FixedRankPoint> {
    if !alpha.is_finite() {
        return Err(Error::Precondition(format!("non-finite step {alpha}")));
    }
    check_len("tangent U rows", x.n(), xi.u_xi.nrows())?;
    check_len("tangent V rows", x.m(), xi.v_xi.nrows())?;
    if alpha == 0.0 || xi.is_zero() {
        return Ok(x.clone());
    }
    let r = x.rank();
    let left = hcat(&[x.u(), &xi.u_xi]);
    let right = hcat(&[x.v(), &xi.v_xi]);
    let mut core = DMatrix::zeros(2 * r, 2 * r);
    core.view_mut((0, 0), (r, r))
        .copy_from(&(x.s_matrix() + &xi.s_xi * alpha));
    core.view_mut((0, r), (r, r)).fill_diagonal(alpha);
    core.view_mut((r, 0), (r, r)).fill_diagonal(alpha);
    FixedRankPoint::from_factored(&left, &core, &right, r)
}

/// Project vectors onto `T_{X_new} M_r`, optionally orthonormalizing them.
/// With `orthonormalize`, nearly dependent vectors (norm below `1e-10`
/// after Gram–Schmidt) are dropped.
pub fn transport(x_new: &FixedRankPoint, vectors: &[LowRank], orthonormalize: bool) -> Result<Vec<TangentVector>> {
    let projected = vectors
        .iter()
        .map(|z| project_lowrank(x_new, z, GaugeKind::ManifoldOnly))
        .collect::<Result<Vec<_>>>()?;
    if orthonormalize {
        Ok(orthonormalize_tangents(&[], projected, 1e-10))
    } else {
        Ok(projected)
    }
}

/// Two-pass Gram–Schmidt of `candidates` against `fixed` (assumed
/// orthonormal) and each other; candidates whose remaining norm falls below
/// `drop_tol` times their original norm are dropped.
pub fn orthonormalize_tangents(
    fixed: &[TangentVector],
    candidates: Vec<TangentVector>,
    drop_tol: f64,
) -> Vec<TangentVector> {
    let mut out: Vec<TangentVector> = Vec::with_capacity(candidates.len());
    for mut c in candidates {
        let original = c.norm();
        if original == 0.0 {
            continue;
        }
        for _ in 0..2 {
            for b in fixed.iter().chain(out.iter()) {
                let h = b.inner(&c);
                c = c.axpy(-h, b);
            }
        }
        let nrm = c.norm();
        if nrm > drop_tol * original && nrm > 0.0 {
            out.push(c.scale(1.0 / nrm));
        }
    }
    out
}

/// `xᵀ A x` from the projected factors.
pub fn rayleigh_quotient(op: &KronSumOperator, x: &FixedRankPoint) -> Result<f64> {
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    Ok(pf.quadratic_form(&x.s_matrix()))
}

/// `‖A x − θ x‖` using QR factors of the rank-`(R+1) r` residual.
pub fn residual_norm(op: &KronSumOperator, x: &FixedRankPoint, theta: f64) -> Result<f64> {
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    Ok(residual_from_factors(&pf, x, theta))
}

pub(crate) fn residual_from_factors(pf: &ProjectedFactors<'_>, x: &FixedRankPoint, theta: f64) -> f64 {
    let ax = pf.apply_point(&x.s_matrix());
    let shifted = LowRank {
        left: x.u() * x.s_matrix() * (-theta),
        right: x.v().clone(),
    };
    ax.plus(&shifted).norm()
}

/// Riemannian gradient `2 P_{T_X M_r}(I − x xᵀ) A x` and the residual norm
/// `‖A x − 𝕽(x) x‖`.
pub fn riemannian_gradient(op: &KronSumOperator, x: &FixedRankPoint) -> Result<(TangentVector, f64)> {
    let pf = ProjectedFactors::new(op, x.u(), x.v())?;
    let s = x.s_matrix();
    let theta = pf.quadratic_form(&s);
    let ax = pf.apply_point(&s);
    let grad = project_lowrank(x, &ax, GaugeKind::SphereIntersection)?.scale(2.0);
    Ok((grad, residual_from_factors(&pf, x, theta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{KronTerm, SparseFactor};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn randn_vec(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..len).map(|_| StandardNormal.sample(rng)).collect()
    }

    fn point(n: usize, m: usize, r: usize, seed: u64) -> FixedRankPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FixedRankPoint::random(n, m, r, &mut rng).unwrap();
        // Spread the spectrum so the point is generic.
        let left = p.u() * DMatrix::from_fn(r, r, |i, j| if i == j { (r - i) as f64 } else { 0.0 });
        FixedRankPoint::from_factored(&left, &DMatrix::identity(r, r), p.v(), r).unwrap()
    }

    /// Dense `P_{T_X M_r} = V Vᵀ ⊗ U Uᵀ + V Vᵀ ⊗ (I − UUᵀ) + (I − VVᵀ) ⊗ U Uᵀ`.
    fn dense_tangent_projector(x: &FixedRankPoint) -> DMatrix<f64> {
        let (n, m) = (x.n(), x.m());
        let pu = x.u() * x.u().transpose();
        let pv = x.v() * x.v().transpose();
        let qu = DMatrix::identity(n, n) - &pu;
        let qv = DMatrix::identity(m, m) - &pv;
        pv.kronecker(&pu) + pv.kronecker(&qu) + qv.kronecker(&pu)
    }

    fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn random_point_is_valid_and_deterministic() {
        let a = FixedRankPoint::random(8, 5, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = FixedRankPoint::random(8, 5, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(FixedRankPoint::new(a.u().clone(), a.singular_values().clone(), a.v().clone()).is_ok());
        assert!(FixedRankPoint::random(3, 5, 4, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn invalid_points_are_rejected() {
        let p = point(5, 4, 2, 3);
        let bad_s = DVector::from_vec(vec![0.5, 0.5]);
        assert!(FixedRankPoint::new(p.u().clone(), bad_s, p.v().clone()).is_err());
        let increasing = DVector::from_vec(vec![0.6, 0.8]);
        assert!(FixedRankPoint::new(p.u().clone(), increasing, p.v().clone()).is_err());
        let skew = p.u() * 2.0;
        assert!(FixedRankPoint::new(skew, p.singular_values().clone(), p.v().clone()).is_err());
    }

    #[test]
    fn point_projects_to_itself() {
        let x = point(6, 6, 2, 5);
        let t = project_to_mr_tangent(&x, &x.to_vec()).unwrap();
        assert!(t.u_xi.norm() < 1e-14 && t.v_xi.norm() < 1e-14);
        assert!((&t.s_xi - x.s_matrix()).norm() < 1e-14);
        let tn = project_to_n_tangent(&x, &x.to_vec()).unwrap();
        assert!(tn.to_dense(&x).norm() < 1e-14);
    }

    #[test]
    fn projections_match_dense_projectors() {
        let x = point(6, 6, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = randn_vec(36, &mut rng);
        let p = dense_tangent_projector(&x);
        let zv = DMatrix::from_column_slice(36, 1, &z);
        let expect = &p * &zv;
        let got = DMatrix::from_column_slice(36, 1, &project_to_mr_tangent(&x, &z).unwrap().to_vec(&x));
        assert!(rel(&got, &expect) <= 1e-12);
        let xv = DMatrix::from_column_slice(36, 1, &x.to_vec());
        let pn = &p - &xv * xv.transpose();
        let expect_n = &pn * &zv;
        let got_n = DMatrix::from_column_slice(36, 1, &project_to_n_tangent(&x, &z).unwrap().to_vec(&x));
        assert!(rel(&got_n, &expect_n) <= 1e-12);
        // Both orders of the sphere and manifold projections agree.
        let ps = DMatrix::identity(36, 36) - &xv * xv.transpose();
        assert!(rel(&(&p * &ps), &(&ps * &p)) <= 1e-12);
    }

    #[test]
    fn lowrank_projection_matches_dense() {
        let x = point(7, 5, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = LowRank::new(
            DMatrix::from_fn(7, 3, |_, _| StandardNormal.sample(&mut rng)),
            DMatrix::from_fn(5, 3, |_, _| StandardNormal.sample(&mut rng)),
        )
        .unwrap();
        let a = project_lowrank(&x, &z, GaugeKind::SphereIntersection).unwrap();
        let b = project_to_n_tangent(&x, z.to_dense().as_slice()).unwrap();
        assert!((a.to_dense(&x) - b.to_dense(&x)).norm() < 1e-12);
        assert!(a.gauge_defect(&x) < 1e-12);
    }

    #[test]
    fn local_vector_round_trip() {
        let x = point(5, 4, 2, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = project_to_mr_tangent(&x, &randn_vec(20, &mut rng)).unwrap();
        let tau = t.to_local();
        assert_eq!(tau.boundaries(), (10, 18));
        assert_eq!(tau.len(), x.local_dim());
        assert_eq!(TangentVector::from_local(&tau, GaugeKind::ManifoldOnly), t);
    }

    #[test]
    fn retraction_at_zero_is_exact() {
        let x = point(6, 5, 2, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xi = project_to_n_tangent(&x, &randn_vec(30, &mut rng)).unwrap();
        assert_eq!(retract(&x, &xi, 0.0).unwrap(), x);
        assert_eq!(
            retract(&x, &TangentVector::zeros(&x, GaugeKind::SphereIntersection), 1.0).unwrap(),
            x
        );
    }

    #[test]
    fn retraction_is_second_order_close() {
        let x = point(6, 6, 2, 15);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let xi = project_to_n_tangent(&x, &randn_vec(36, &mut rng)).unwrap();
        let (x0, d) = (x.to_dense(), xi.to_dense(&x));
        let ts = [1e-2, 1e-3, 1e-4, 1e-5];
        let errs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let y = retract(&x, &xi, t).unwrap();
                let aligned = if y.to_dense().dot(&x0) < 0.0 {
                    -y.to_dense()
                } else {
                    y.to_dense()
                };
                (aligned - &x0 - &d * t).norm()
            })
            .collect();
        let slope = (errs[0].ln() - errs[3].ln()) / (ts[0].ln() - ts[3].ln());
        assert!(slope >= 1.9, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn degenerate_retraction_is_reported() {
        let x = point(5, 5, 2, 17);
        // Step that cancels the second singular direction exactly.
        let mut xi = TangentVector::zeros(&x, GaugeKind::ManifoldOnly);
        xi.s_xi[(1, 1)] = -x.singular_values()[1];
        assert!(matches!(retract(&x, &xi, 1.0), Err(Error::RankDegeneracy { .. })));
    }

    #[test]
    fn transport_orthonormalizes() {
        let x = point(6, 6, 2, 19);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let vecs: Vec<LowRank> = (0..4)
            .map(|_| {
                LowRank::new(
                    DMatrix::from_fn(6, 2, |_, _| StandardNormal.sample(&mut rng)),
                    DMatrix::from_fn(6, 2, |_, _| StandardNormal.sample(&mut rng)),
                )
                .unwrap()
            })
            .collect();
        let out = transport(&x, &vecs, true).unwrap();
        assert_eq!(out.len(), 4);
        for (i, a) in out.iter().enumerate() {
            for (j, b) in out.iter().enumerate() {
                let g = a.embed(&x).inner(&b.embed(&x));
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        let zero = LowRank::new(DMatrix::zeros(6, 1), DMatrix::zeros(6, 1)).unwrap();
        assert!(transport(&x, &[zero], false).unwrap()[0].is_zero());
    }

    fn laplacian(n: usize) -> KronSumOperator {
        let h = 1.0 / (n as f64 + 1.0);
        let t = SparseFactor::tridiagonal(n, -1.0 / (h * h), 2.0 / (h * h), -1.0 / (h * h));
        KronSumOperator::new(
            vec![
                KronTerm {
                    f: SparseFactor::identity(n),
                    g: t.clone(),
                },
                KronTerm {
                    f: t,
                    g: SparseFactor::identity(n),
                },
            ],
            true,
        )
        .unwrap()
    }

    #[test]
    fn rayleigh_quotient_of_sine_mode_is_analytic() {
        let n = 10;
        let h = 1.0 / (n as f64 + 1.0);
        let op = laplacian(n);
        let sine = DMatrix::from_fn(n, 1, |i, _| (std::f64::consts::PI * (i + 1) as f64 * h).sin());
        let x = FixedRankPoint::from_factored(&sine, &DMatrix::identity(1, 1), &sine, 1).unwrap();
        let expect = 2.0 * (2.0 - 2.0 * (std::f64::consts::PI * h).cos()) / (h * h);
        let theta = rayleigh_quotient(&op, &x).unwrap();
        assert!((theta - expect).abs() <= 1e-12 * expect);
        let (grad, res) = riemannian_gradient(&op, &x).unwrap();
        assert!(grad.norm() <= 1e-10 * expect && res <= 1e-10 * expect);
    }

    #[test]
    fn gradient_matches_dense_formula_and_finite_differences() {
        let op = {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            let mut sym = |k: usize| {
                let a = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
                SparseFactor::from_dense(&(&a + a.transpose()))
            };
            KronSumOperator::new(
                vec![KronTerm { f: sym(6), g: sym(6) }, KronTerm { f: sym(6), g: sym(6) }],
                true,
            )
            .unwrap()
        };
        let x = point(6, 6, 2, 24);
        let a = op.densify(false).unwrap();
        let xv = DMatrix::from_column_slice(36, 1, &x.to_vec());
        let theta = (xv.transpose() * &a * &xv)[(0, 0)];
        assert!((rayleigh_quotient(&op, &x).unwrap() - theta).abs() <= 1e-12 * theta.abs().max(1.0));
        let pn = dense_tangent_projector(&x) - &xv * xv.transpose();
        let expect = (&pn * &a * &xv) * 2.0;
        let (grad, res) = riemannian_gradient(&op, &x).unwrap();
        let got = DMatrix::from_column_slice(36, 1, &grad.to_vec(&x));
        assert!(rel(&got, &expect) <= 1e-12);
        let dense_res = (&a * &xv - &xv * theta).norm();
        assert!((res - dense_res).abs() <= 1e-12 * dense_res);

        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let xi = project_to_n_tangent(&x, &randn_vec(36, &mut rng)).unwrap();
        let t = 1e-5;
        let fp = rayleigh_quotient(&op, &retract(&x, &xi, t).unwrap()).unwrap();
        let fm = rayleigh_quotient(&op, &retract(&x, &xi, -t).unwrap()).unwrap();
        let fd = (fp - fm) / (2.0 * t);
        let exact = grad.inner(&xi);
        assert!(
            (fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3),
            "fd {fd} exact {exact}"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projections_are_idempotent_and_self_adjoint(seed in 0u64..500) {
            let x = point(6, 5, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let z = randn_vec(30, &mut rng);
            let w = randn_vec(30, &mut rng);
            for gauge in [GaugeKind::ManifoldOnly, GaugeKind::SphereIntersection] {
                let p = |v: &[f64]| project_dense(&x, v, gauge).unwrap().to_vec(&x);
                let pz = p(&z);
                let ppz = p(&pz);
                let err: f64 = pz.iter().zip(&ppz).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let nrm: f64 = pz.iter().map(|a| a * a).sum::<f64>().sqrt();
                prop_assert!(err <= 1e-12 * nrm.max(1.0));
                let lhs: f64 = pz.iter().zip(&w).map(|(a, b)| a * b).sum();
                let rhs: f64 = z.iter().zip(&p(&w)).map(|(a, b)| a * b).sum();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }

        #[test]
        fn retraction_output_is_a_valid_point(seed in 0u64..500, alpha in -3.0f64..3.0) {
            let x = point(7, 6, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 2000);
            let xi = project_to_n_tangent(&x, &randn_vec(42, &mut rng)).unwrap();
            match retract(&x, &xi, alpha) {
                Ok(y) => {
                    prop_assert!(FixedRankPoint::new(y.u().clone(), y.singular_values().clone(), y.v().clone()).is_ok());
                }
                Err(Error::RankDegeneracy { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn tangent_embedding_has_rank_at_most_2r(seed in 0u64..500) {
            let x = point(8, 7, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 3000);
            let t = project_to_mr_tangent(&x, &randn_vec(56, &mut rng)).unwrap();
            let sv = t.to_dense(&x).singular_values();
            let big = sv.iter().filter(|&&s| s > 1e-10 * sv.max()).count();
            prop_assert!(big <= 4);
        }
    }
}
