//! Factored low-rank matrices `Z = L Rᵀ`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An `n × m` matrix held as `left · rightᵀ` with `left: n × k`, `right: m × k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
}

/// Thin SVD `Z = U diag(s) Vᵀ` with singular values sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl LowRank {
    pub fn new(left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        if left.ncols() != right.ncols() {
            return Err(Error::Dimension {
                context: "low-rank factor widths",
                expected: left.ncols(),
                got: right.ncols(),
            });
        }
        Ok(Self { left, right })
    }

    pub fn nrows(&self) -> usize {
        self.left.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.right.nrows()
    }

    /// Number of stored columns (an upper bound on the rank).
    pub fn width(&self) -> usize {
        self.left.ncols()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        &self.left * self.right.transpose()
    }

    /// Frobenius inner product `⟨self, other⟩ = tr((L₁ᵀL₂)(R₂ᵀR₁))`.
    pub fn inner(&self, other: &LowRank) -> f64 {
        let ll = self.left.transpose() * &other.left;
        let rr = other.right.transpose() * &self.right;
        (ll * rr).trace()
    }

    /// Frobenius norm computed through QR factors of both sides, which avoids
    /// the cancellation of a Gram-matrix formula.
    pub fn norm(&self) -> f64 {
        if self.width() == 0 {
            return 0.0;
        }
        let rl = thin_r(&self.left);
        let rr = thin_r(&self.right);
        (rl * rr.transpose()).norm()
    }

    pub fn scale(mut self, alpha: f64) -> Self {
        self.left *= alpha;
        self
    }

    /// Concatenation `self + other` (widths add).
    pub fn plus(&self, other: &LowRank) -> LowRank {
        LowRank {
            left: hcat(&[&self.left, &other.left]),
            right: hcat(&[&self.right, &other.right]),
        }
    }

    /// Thin SVD of the represented matrix, via QR of both factors and an SVD
    /// of the small core.
    pub fn svd(&self) -> ThinSvd {
        let (ql, rl) = thin_qr(&self.left);
        let (qr, rr) = thin_qr(&self.right);
        let core = rl * rr.transpose();
        let core_svd = sorted_svd(&core);
        ThinSvd {
            u: ql * core_svd.u,
            s: core_svd.s,
            v: qr * core_svd.v,
        }
    }
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.columns_mut(c, b.ncols()).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Thin QR: `Q` has `min(rows, cols)` orthonormal columns.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

fn thin_r(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().qr().r()
}

/// SVD with singular values sorted in decreasing order and all factors present.
pub fn sorted_svd(a: &DMatrix<f64>) -> ThinSvd {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let mut uo = DMatrix::zeros(u.nrows(), order.len());
    let mut vo = DMatrix::zeros(vt.ncols(), order.len());
    let mut so = Vec::with_capacity(order.len());
    for (k, &i) in order.iter().enumerate() {
        uo.set_column(k, &u.column(i));
        vo.set_column(k, &vt.row(i).transpose());
        so.push(s[i]);
    }
    ThinSvd { u: uo, s: so, v: vo }
}

/// Orthonormalize the columns of `a` with a QR factorization.
pub fn orthonormalize(a: &DMatrix<f64>) -> DMatrix<f64> {
    thin_qr(a).0
}

/// `‖QᵀQ − I‖_F`.
pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q;
    (g - DMatrix::<f64>::identity(q.ncols(), q.ncols())).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    #[test]
    fn norm_and_inner_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = LowRank::new(randn(7, 3, &mut rng), randn(5, 3, &mut rng)).unwrap();
        let b = LowRank::new(randn(7, 2, &mut rng), randn(5, 2, &mut rng)).unwrap();
        let (da, db) = (a.to_dense(), b.to_dense());
        assert!((a.norm() - da.norm()).abs() < 1e-12 * da.norm());
        assert!((a.inner(&b) - da.dot(&db)).abs() < 1e-12 * da.norm() * db.norm());
        assert!((a.plus(&b).to_dense() - (da + db)).norm() < 1e-12);
    }

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = LowRank::new(randn(9, 4, &mut rng), randn(6, 4, &mut rng)).unwrap();
        let svd = a.svd();
        assert!(svd.s.windows(2).all(|w| w[0] >= w[1]));
        let rec = &svd.u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(svd.s.clone())) * svd.v.transpose();
        assert!((rec - a.to_dense()).norm() < 1e-12 * a.norm());
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        assert!(LowRank::new(DMatrix::zeros(3, 2), DMatrix::zeros(3, 1)).is_err());
    }
}
