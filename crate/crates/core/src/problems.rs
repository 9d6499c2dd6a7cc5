//! Benchmark operators: 2D convection–diffusion with a low-rank potential,
//! the Dirichlet Laplacian and separable diagonal fixtures.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::krylov::KronSumSymbol;
use crate::lowrank::sorted_svd;
use crate::operator::{KronSumOperator, KronTerm, SparseFactor};

/// Potential added to the diffusion operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    None,
    /// `exp(−√(x² + y²) / scale)`.
    ExpRadial {
        scale: f64,
    },
}

/// Convection–diffusion problem on `(−1/2, 1/2)²` with `n` interior points per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeSpec {
    pub n: usize,
    pub potential: Potential,
    pub convection: bool,
    /// Relative Frobenius accuracy of the potential's SVD truncation.
    pub svd_tol: f64,
    /// Keep at most this many potential terms (after the tolerance cut).
    pub potential_rank_cap: Option<usize>,
}

impl Default for PdeSpec {
    fn default() -> Self {
        Self {
            n: 150,
            potential: Potential::ExpRadial { scale: 10.0 },
            convection: true,
            svd_tol: 1e-10,
            potential_rank_cap: None,
        }
    }
}

impl PdeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::Precondition(format!(
                "grid size n = {} must be at least 3",
                self.n
            )));
        }
        if !(self.svd_tol > 0.0 && self.svd_tol < 1.0) {
            return Err(Error::Precondition(format!(
                "svd_tol = {} must lie in (0, 1)",
                self.svd_tol
            )));
        }
        if let Potential::ExpRadial { scale } = self.potential {
            if !(scale > 0.0) {
                return Err(Error::Precondition(format!("potential scale {scale} must be positive")));
            }
        }
        Ok(())
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }
}

/// A built benchmark operator with its preconditioning symbol.
#[derive(Debug, Clone)]
pub struct Problem {
    pub operator: KronSumOperator,
    /// Symmetric Kronecker-sum part (diffusion plus symmetrized convection).
    pub symbol: KronSumSymbol,
    /// Number of potential terms kept.
    pub potential_rank: usize,
    /// Relative Frobenius error of the truncated potential.
    pub potential_error: f64,
}

/// `(1/h²) tridiag(−1, 2, −1)` with `h = 1/(n+1)`.
pub fn second_difference(n: usize) -> SparseFactor {
    let h = 1.0 / (n + 1) as f64;
    let c = 1.0 / (h * h);
    SparseFactor::tridiagonal(n, -c, 2.0 * c, -c)
}

/// Backward difference `(u_i − u_{i−1}) / h`.
pub fn backward_difference(n: usize) -> SparseFactor {
    let h = 1.0 / (n + 1) as f64;
    SparseFactor::tridiagonal(n, -1.0 / h, 1.0 / h, 0.0)
}

/// Interior grid coordinates of `(−1/2, 1/2)`.
pub fn grid(n: usize) -> Vec<f64> {
    let h = 1.0 / (n + 1) as f64;
    (1..=n).map(|i| -0.5 + i as f64 * h).collect()
}

/// Potential values, `x` along rows and `y` along columns.
pub fn potential_matrix(n: usize, scale: f64) -> DMatrix<f64> {
    let g = grid(n);
    DMatrix::from_fn(n, n, |i, j| (-(g[i] * g[i] + g[j] * g[j]).sqrt() / scale).exp())
}

pub fn build_convection_diffusion(spec: &PdeSpec) -> Result<Problem> {
    spec.validate()?;
    let n = spec.n;
    let id = SparseFactor::identity(n);
    let t = second_difference(n);
    let mut terms = vec![
        KronTerm {
            f: id.clone(),
            g: t.clone(),
        },
        KronTerm { f: t, g: id.clone() },
    ];
    if spec.convection {
        let c = backward_difference(n);
        terms.push(KronTerm {
            f: id.clone(),
            g: c.clone(),
        });
        terms.push(KronTerm { f: c, g: id });
    }
    let (mut potential_rank, mut potential_error) = (0, 0.0);
    if let Potential::ExpRadial { scale } = spec.potential {
        let p = potential_matrix(n, scale);
        let svd = sorted_svd(&p);
        // tails[k] = Σ_{i ≥ k} σ_i², summed from the small end.
        let mut tails = vec![0.0; svd.s.len() + 1];
        for i in (0..svd.s.len()).rev() {
            tails[i] = tails[i + 1] + svd.s[i] * svd.s[i];
        }
        let total = tails[0];
        // Smallest k whose discarded tail is within tolerance.
        let mut k = 0;
        while k < svd.s.len() && tails[k].sqrt() > spec.svd_tol * total.sqrt() {
            k += 1;
        }
        if let Some(cap) = spec.potential_rank_cap {
            k = k.min(cap);
        }
        for i in 0..k {
            let right: Vec<f64> = svd.v.column(i).iter().map(|v| v * svd.s[i]).collect();
            let left: Vec<f64> = svd.u.column(i).iter().copied().collect();
            // diag-scaled Hadamard product: vec(P ∘ X) = Σ vec(diag(u) X diag(σ v))
            terms.push(KronTerm {
                f: SparseFactor::diagonal(&right),
                g: SparseFactor::diagonal(&left),
            });
        }
        let kept = DMatrix::from_fn(n, n, |a, b| {
            (0..k).map(|i| svd.u[(a, i)] * svd.s[i] * svd.v[(b, i)]).sum()
        });
        potential_rank = k;
        potential_error = (p.clone() - kept).norm() / p.norm();
    }
    let operator = KronSumOperator::new(terms, !spec.convection)?;
    let symbol = KronSumSymbol::from_operator(&operator).expect("diffusion terms are identity-paired");
    Ok(Problem {
        operator,
        symbol,
        potential_rank,
        potential_error,
    })
}

/// `I_m ⊗ T_n + T_m ⊗ I_n` with Dirichlet boundaries and `h = 1/(k+1)` per axis.
pub fn build_laplacian2d(n: usize, m: usize) -> Result<KronSumOperator> {
    if n < 3 || m < 3 {
        return Err(Error::Precondition(format!(
            "Laplacian grid {n}×{m} needs at least 3 points per axis"
        )));
    }
    KronSumOperator::new(
        vec![
            KronTerm {
                f: SparseFactor::identity(m),
                g: second_difference(n),
            },
            KronTerm {
                f: second_difference(m),
                g: SparseFactor::identity(n),
            },
        ],
        true,
    )
}

/// Smallest eigenvalue of [`build_laplacian2d`].
pub fn laplacian_min_eigenvalue(n: usize, m: usize) -> f64 {
    let one = |k: usize| {
        let h = 1.0 / (k + 1) as f64;
        (2.0 - 2.0 * (std::f64::consts::PI * h).cos()) / (h * h)
    };
    one(n) + one(m)
}

/// `diag(d_f) ⊗ I + I ⊗ diag(d_g)`, whose eigenvectors are `e_i ⊗ e_j`.
pub fn build_diag_kron(d_f: &[f64], d_g: &[f64]) -> Result<KronSumOperator> {
    if d_f.is_empty() || d_g.is_empty() {
        return Err(Error::Precondition("diagonals must be non-empty".into()));
    }
    KronSumOperator::new(
        vec![
            KronTerm {
                f: SparseFactor::diagonal(d_f),
                g: SparseFactor::identity(d_g.len()),
            },
            KronTerm {
                f: SparseFactor::identity(d_f.len()),
                g: SparseFactor::diagonal(d_g),
            },
        ],
        true,
    )
}
