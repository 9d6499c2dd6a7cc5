//! Exponential-sum approximate inverse of a Kronecker-sum symbol
//! `M = F ⊗ I + I ⊗ G − shift·I`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};
use crate::operator::{KronSumOperator, SparseFactor};

/// Symmetric Kronecker-sum part `F ⊗ I_n + I_m ⊗ G` of an operator.
#[derive(Debug, Clone, PartialEq)]
pub struct KronSumSymbol {
    /// `m × m`, acting on columns.
    pub f: SparseFactor,
    /// `n × n`, acting on rows.
    pub g: SparseFactor,
}

impl KronSumSymbol {
    /// Symmetric parts of the terms whose other factor is the identity.
    pub fn from_operator(op: &KronSumOperator) -> Option<Self> {
        let mut fs = Vec::new();
        let mut gs = Vec::new();
        for t in op.terms() {
            if t.g.is_identity() {
                fs.push(t.f.clone());
            } else if t.f.is_identity() {
                gs.push(t.g.clone());
            }
        }
        if fs.is_empty() || gs.is_empty() {
            return None;
        }
        let sym = |parts: &[SparseFactor]| {
            let mut all: Vec<(f64, &SparseFactor)> = Vec::new();
            let transposed: Vec<SparseFactor> = parts.iter().map(|p| p.transpose()).collect();
            for (p, pt) in parts.iter().zip(&transposed) {
                all.push((0.5, p));
                all.push((0.5, pt));
            }
            SparseFactor::combine(&all).expect("equal sizes")
        };
        Some(Self {
            f: sym(&fs),
            g: sym(&gs),
        })
    }
}

/// Nodes and weights of `1/λ ≈ Σ_k w_k e^{−t_k λ}` valid on `λ ∈ [1, κ]`.
///
/// Trapezoid rule for `1/λ = ∫ e^{−λ t} dt` after the double-exponential
/// substitution `t = exp(a s − e^{−s})`, on `2K + 1` nodes
/// `s_j = c + j h`. The step `h`, offset `c` and growth `a` are tuned to
/// minimize the maximal relative error on `[1, κ]`. All weights are positive.
pub fn expsum_rule(k: usize, kappa: f64) -> (Vec<f64>, Vec<f64>) {
    let kappa = kappa.max(1.0);
    let samples: Vec<f64> = (0..400).map(|i| kappa.powf(i as f64 / 399.0)).collect();
    let err = |p: [f64; 3]| {
        if p[0] <= 0.0 || p[2] <= 0.0 {
            return f64::INFINITY;
        }
        let (t, w) = rule(k, p);
        max_rel_error(&t, &w, &samples)
    };
    let mut best = (f64::INFINITY, [0.1, 0.0, 1.0]);
    for hi in 0..23 {
        for ci in 0..13 {
            for a in [0.5, 1.0, 2.0, 3.0, 4.0] {
                let p = [0.05 + 0.025 * hi as f64, -3.0 + 0.5 * ci as f64, a];
                let e = err(p);
                if e < best.0 {
                    best = (e, p);
                }
            }
        }
    }
    // Compass search from the best grid point.
    let (mut e, mut p) = best;
    let mut step = [0.0125, 0.25, 0.5];
    for _ in 0..200 {
        let mut moved = false;
        for i in 0..3 {
            for sign in [1.0, -1.0] {
                let mut q = p;
                q[i] += sign * step[i];
                let qe = err(q);
                if qe < e {
                    (e, p) = (qe, q);
                    moved = true;
                }
            }
        }
        if !moved {
            step.iter_mut().for_each(|s| *s *= 0.5);
            if step[0] < 1e-7 {
                break;
            }
        }
    }
    rule(k, p)
}

fn rule(k: usize, [h, c, a]: [f64; 3]) -> (Vec<f64>, Vec<f64>) {
    (0..=2 * k)
        .map(|j| {
            let s = c + (j as f64 - k as f64) * h;
            let t = (a * s - (-s).exp()).exp();
            (t, h * t * (a + (-s).exp()))
        })
        .filter(|&(t, w)| t > 0.0 && w > 0.0 && t.is_finite() && w.is_finite())
        .unzip()
}

fn eval(t: &[f64], w: &[f64], lambda: f64) -> f64 {
    t.iter().zip(w).map(|(t, w)| w * (-t * lambda).exp()).sum()
}

fn max_rel_error(t: &[f64], w: &[f64], samples: &[f64]) -> f64 {
    samples
        .iter()
        .map(|&l| (eval(t, w, l) * l - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Symmetric eigendecomposition `Q diag(λ) Qᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub(crate) struct Eigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Eigen {
    pub fn of(a: &DMatrix<f64>) -> Self {
        let sym = (a + a.transpose()) * 0.5;
        let e = sym.symmetric_eigen();
        let mut order: Vec<usize> = (0..e.eigenvalues.len()).collect();
        order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
        let values = DVector::from_iterator(order.len(), order.iter().map(|&i| e.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(a.nrows(), order.len());
        for (k, &i) in order.iter().enumerate() {
            vectors.set_column(k, &e.eigenvectors.column(i));
        }
        Self { values, vectors }
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

/// `M⁻¹ ≈ Σ_k c_k e^{−t_k F} ⊗ e^{−t_k G}` for `M = F ⊗ I + I ⊗ G − shift·I`.
///
/// The exponentials are applied through symmetric eigendecompositions of
/// the factors, so one application costs two dense basis changes per side.
#[derive(Debug, Clone)]
pub struct ExpSumPrecond {
    k: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    shift: f64,
    f: Eigen,
    g: Eigen,
    spectral_bounds: (f64, f64),
    quadrature_error: f64,
}

impl ExpSumPrecond {
    pub fn build(f_sym: &SparseFactor, g_sym: &SparseFactor, shift: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Precondition("exp-sum needs K ≥ 1".into()));
        }
        let f = Eigen::of(&f_sym.to_dense());
        let g = Eigen::of(&g_sym.to_dense());
        let lo = f.min() + g.min() - shift;
        let hi = f.max() + g.max() - shift;
        if !(lo > 0.0) {
            return Err(Error::IndefiniteSymbol(lo));
        }
        let (t, w) = expsum_rule(k, hi / lo);
        let nodes: Vec<f64> = t.iter().map(|t| t / lo).collect();
        let weights: Vec<f64> = w.iter().map(|w| w / lo).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let quadrature_error = (0..20)
            .map(|_| {
                let l = lo * (hi / lo).powf(rng.random::<f64>());
                (eval(&nodes, &weights, l) * l - 1.0).abs()
            })
            .fold(0.0, f64::max);
        Ok(Self {
            k,
            nodes,
            weights,
            shift,
            f,
            g,
            spectral_bounds: (lo, hi),
            quadrature_error,
        })
    }

    pub fn from_symbol(symbol: &KronSumSymbol, shift: f64, k: usize) -> Result<Self> {
        Self::build(&symbol.f, &symbol.g, shift, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `(λ_min, λ_max)` of the shifted symbol.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        self.spectral_bounds
    }

    /// Largest relative error of the scalar rule on 20 seeded samples of the spectrum.
    pub fn quadrature_error(&self) -> f64 {
        self.quadrature_error
    }

    /// `Σ c_k e^{−t_k λ}`, the scalar approximation of `1/λ` (before the shift).
    pub fn inverse_scalar(&self, lambda: f64) -> f64 {
        eval(&self.nodes, &self.weights, lambda - self.shift)
    }

    pub(crate) fn f_eigen(&self) -> &Eigen {
        &self.f
    }

    pub(crate) fn g_eigen(&self) -> &Eigen {
        &self.g
    }

    /// `Y = Q_l [Φ ∘ (Q_lᵀ Z Q_r)] Q_rᵀ` with `Φ_ij ≈ 1 / (l_i + r_j − shift)`:
    /// the approximate solution of `L Y + Y R = Z` for symmetric `L`, `R`.
    pub(crate) fn sylvester(&self, left: &Eigen, right: &Eigen, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut w = left.vectors.transpose() * z * &right.vectors;
        for j in 0..w.ncols() {
            for i in 0..w.nrows() {
                w[(i, j)] *= self.inverse_scalar(left.values[i] + right.values[j]);
            }
        }
        &left.vectors * w * right.vectors.transpose()
    }

    /// Approximate `M⁻¹ vec(X)` for `X: n × m`.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("exp-sum input rows", self.g.values.len(), x.nrows())?;
        check_len("exp-sum input cols", self.f.values.len(), x.ncols())?;
        Ok(self.sylvester(&self.g, &self.f, x))
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (n, m) = (self.g.values.len(), self.f.values.len());
        check_len("exp-sum input", n * m, x.len())?;
        let xm = DMatrix::from_column_slice(n, m, x);
        Ok(self.apply_matrix(&xm)?.as_slice().to_vec())
    }

    /// Dense `Σ c_k e^{−t_k F} ⊗ e^{−t_k G}` (with the shift folded into the weights), for testing.
    pub fn densify(&self) -> DMatrix<f64> {
        let expm = |e: &Eigen, t: f64| {
            let d = DMatrix::from_diagonal(&e.values.map(|v| (-t * v).exp()));
            &e.vectors * d * e.vectors.transpose()
        };
        let (n, m) = (self.g.values.len(), self.f.values.len());
        let mut out = DMatrix::zeros(n * m, n * m);
        for (t, c) in self.nodes.iter().zip(&self.weights) {
            let w = c * (t * self.shift).exp();
            out += expm(&self.f, *t).kronecker(&expm(&self.g, *t)) * w;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_1d(n: usize) -> SparseFactor {
        let h = 1.0 / (n as f64 + 1.0);
        SparseFactor::tridiagonal(n, -1.0 / (h * h), 2.0 / (h * h), -1.0 / (h * h))
    }

    #[test]
    fn scalar_rule_is_accurate() {
        for (a, b) in [(1.0, 2.0), (0.3, 7.5), (120.0, 4.0)] {
            let p =
                ExpSumPrecond::build(&SparseFactor::diagonal(&[a]), &SparseFactor::diagonal(&[b]), 0.0, 20).unwrap();
            let approx = p.inverse_scalar(a + b);
            assert!((approx * (a + b) - 1.0).abs() <= 1e-6, "{a} {b}: {approx}");
        }
    }

    #[test]
    fn laplacian_inverse_is_accurate() {
        let t = laplacian_1d(32);
        let p = ExpSumPrecond::build(&t, &t, 0.0, 20).unwrap();
        let spectral = {
            let d = &approx_times(&p, &t) - DMatrix::identity(1024, 1024);
            d.singular_values().max()
        };
        assert!(spectral <= 1e-4, "{spectral}");
        assert!(p.quadrature_error() <= 1e-6);
    }

    fn approx_times(p: &ExpSumPrecond, t: &SparseFactor) -> DMatrix<f64> {
        let n = t.nrows();
        let m =
            t.to_dense().kronecker(&DMatrix::identity(n, n)) + DMatrix::<f64>::identity(n, n).kronecker(&t.to_dense());
        p.densify() * m
    }

    #[test]
    fn rank_one_application_matches_dense_sum() {
        let f = laplacian_1d(9);
        let g = SparseFactor::tridiagonal(7, -1.0, 3.0, -1.0);
        let p = ExpSumPrecond::build(&f, &g, 0.5, 10).unwrap();
        let a = DVector::from_fn(7, |i, _| (i as f64 + 1.0).sin());
        let b = DVector::from_fn(9, |i, _| (i as f64 * 0.7).cos());
        let x = &a * b.transpose();
        let got = DVector::from_vec(p.apply(x.as_slice()).unwrap());
        let expect = p.densify() * DVector::from_column_slice(x.as_slice());
        assert!((got - &expect).norm() <= 1e-10 * expect.norm());
    }

    #[test]
    fn error_decreases_with_more_terms() {
        let kappa = 442.0;
        let samples: Vec<f64> = (0..200).map(|i| f64::powf(kappa, i as f64 / 199.0)).collect();
        let errs: Vec<f64> = [5, 10, 20, 40]
            .iter()
            .map(|&k| {
                let (t, w) = expsum_rule(k, kappa);
                max_rel_error(&t, &w, &samples)
            })
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= 1.1 * w[0], "{errs:?}");
        }
        assert!(errs[2] <= 1e-6, "{errs:?}");
    }

    #[test]
    fn indefinite_symbol_is_rejected() {
        let f = SparseFactor::diagonal(&[1.0, -3.0]);
        let g = SparseFactor::diagonal(&[1.0]);
        assert!(matches!(
            ExpSumPrecond::build(&f, &g, 0.0, 5),
            Err(Error::IndefiniteSymbol(_))
        ));
    }
}
