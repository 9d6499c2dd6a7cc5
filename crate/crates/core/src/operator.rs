//! Kronecker-sum operators `A = Σ F_α ⊗ G_α` with sparse factors.
//!
//! Vectors of length `nm` are column-major matricizations of `n × m` matrices,
//! so `(F ⊗ G) vec(X) = vec(G X Fᵀ)` with `G: n × n` and `F: m × m`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::lowrank::{hcat, orthonormality_defect, LowRank};

/// Largest `nm` that densification helpers accept without `force`.
pub const DENSE_LIMIT: usize = 4096;

/// Tolerance on `‖QᵀQ − I‖_F` for factors handed to projected products.
pub const ORTHO_TOL: f64 = 1e-12;

/// Compressed-row sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFactor {
    n_rows: usize,
    n_cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseFactor {
    /// Build from raw CSR arrays, validating the layout.
    pub fn new(
        n_rows: usize,
        n_cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::Precondition("sparse factor must be non-empty".into()));
        }
        check_len("row offsets", n_rows + 1, row_offsets.len())?;
        check_len("column indices", values.len(), col_indices.len())?;
        if row_offsets[0] != 0 || row_offsets[n_rows] != values.len() {
            return Err(Error::Precondition(
                "row offsets must start at 0 and end at the number of stored values".into(),
            ));
        }
        if row_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Precondition("row offsets must be nondecreasing".into()));
        }
        if let Some(&j) = col_indices.iter().find(|&&j| j >= n_cols) {
            return Err(Error::Precondition(format!(
                "column index {j} out of range for {n_cols} columns"
            )));
        }
        Ok(Self {
            n_rows,
            n_cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|&&(i, j, _)| i >= n_rows || j >= n_cols) {
            return Err(Error::Precondition(format!(
                "entry ({i}, {j}) outside a {n_rows}×{n_cols} matrix"
            )));
        }
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0usize; n_rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..n_rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Self::new(n_rows, n_cols, row_offsets, col_indices, values)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n_rows: n,
            n_cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    /// Square tridiagonal matrix with constant bands; zero bands are not stored.
    pub fn tridiagonal(n: usize, lower: f64, diag: f64, upper: f64) -> Self {
        let mut t = Vec::with_capacity(3 * n);
        for i in 0..n {
            if i > 0 && lower != 0.0 {
                t.push((i, i - 1, lower));
            }
            if diag != 0.0 {
                t.push((i, i, diag));
            }
            if i + 1 < n && upper != 0.0 {
                t.push((i, i + 1, upper));
            }
        }
        Self::from_triplets(n, n, &t).expect("indices are in range")
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &t).expect("indices are in range")
    }

    pub fn nrows(&self) -> usize {
        self.n_rows
    }

    pub fn ncols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n_rows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                out.push((i, self.col_indices[k], self.values[k]));
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n_rows, self.n_cols);
        for (i, j, v) in self.triplets() {
            a[(i, j)] += v;
        }
        a
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n_cols, self.n_rows, &t).expect("indices are in range")
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn is_identity(&self) -> bool {
        self.is_square()
            && self
                .triplets()
                .iter()
                .all(|&(i, j, v)| (i == j) == (v == 1.0) || v == 0.0)
            && (0..self.n_rows).all(|i| {
                (self.row_offsets[i]..self.row_offsets[i + 1])
                    .any(|k| self.col_indices[k] == i && self.values[k] == 1.0)
            })
    }

    /// Linear combination `Σ w_k M_k` of equally sized factors.
    pub fn combine(parts: &[(f64, &SparseFactor)]) -> Result<Self> {
        let (rows, cols) = parts
            .first()
            .map(|(_, f)| (f.n_rows, f.n_cols))
            .ok_or_else(|| Error::Precondition("empty linear combination".into()))?;
        let mut t = Vec::new();
        for (w, f) in parts {
            if (f.n_rows, f.n_cols) != (rows, cols) {
                return Err(Error::InconsistentDimensions(format!(
                    "cannot combine {}×{} with {rows}×{cols}",
                    f.n_rows, f.n_cols
                )));
            }
            t.extend(f.triplets().into_iter().map(|(i, j, v)| (i, j, w * v)));
        }
        Self::from_triplets(rows, cols, &t)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("sparse matvec input", self.n_cols, x.len())?;
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    /// `self · d`.
    pub fn mul_dense(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(d.nrows(), self.n_cols, "sparse × dense inner dimension");
        let mut out = DMatrix::zeros(self.n_rows, d.ncols());
        let (dn, on) = (d.nrows(), self.n_rows);
        let ds = d.as_slice();
        let os = out.as_mut_slice();
        for c in 0..d.ncols() {
            self.matvec_into(&ds[c * dn..(c + 1) * dn], &mut os[c * on..(c + 1) * on]);
        }
        out
    }

    /// `selfᵀ · d`, by scattering rows instead of storing the transpose.
    pub fn transpose_mul_dense(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(d.nrows(), self.n_rows, "sparseᵀ × dense inner dimension");
        let mut out = DMatrix::zeros(self.n_cols, d.ncols());
        let (dn, on) = (d.nrows(), self.n_cols);
        let ds = d.as_slice();
        let os = out.as_mut_slice();
        for c in 0..d.ncols() {
            let src = &ds[c * dn..(c + 1) * dn];
            let dst = &mut os[c * on..(c + 1) * on];
            for (i, &di) in src.iter().enumerate() {
                if di == 0.0 {
                    continue;
                }
                for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                    dst[self.col_indices[k]] += self.values[k] * di;
                }
            }
        }
        out
    }

    /// `d · selfᵀ`.
    pub fn right_mul_transpose(&self, d: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(d.ncols(), self.n_cols, "dense × sparseᵀ inner dimension");
        let rows = d.nrows();
        let mut out = DMatrix::zeros(rows, self.n_rows);
        let ds = d.as_slice();
        let os = out.as_mut_slice();
        for j in 0..self.n_rows {
            let dst = &mut os[j * rows..(j + 1) * rows];
            for k in self.row_offsets[j]..self.row_offsets[j + 1] {
                let col = self.col_indices[k];
                let w = self.values[k];
                for (o, s) in dst.iter_mut().zip(&ds[col * rows..(col + 1) * rows]) {
                    *o += w * s;
                }
            }
        }
        out
    }
}

/// One term `F ⊗ G` of a Kronecker sum; `f` acts on columns (`m × m`), `g` on rows (`n × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct KronTerm {
    pub f: SparseFactor,
    pub g: SparseFactor,
}

/// `A = Σ F_α ⊗ G_α` acting on `n × m` matricized vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KronSumOperator {
    n: usize,
    m: usize,
    terms: Vec<KronTerm>,
    symmetric_hint: bool,
}

impl KronSumOperator {
    pub fn new(terms: Vec<KronTerm>, symmetric_hint: bool) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::Precondition("operator needs at least one term".into()))?;
        let (n, m) = (first.g.nrows(), first.f.nrows());
        for (k, t) in terms.iter().enumerate() {
            if !t.f.is_square() || !t.g.is_square() {
                return Err(Error::InconsistentDimensions(format!(
                    "term {k}: factors must be square"
                )));
            }
            if t.f.nrows() != m || t.g.nrows() != n {
                return Err(Error::InconsistentDimensions(format!(
                    "term {k}: F is {0}×{0}, G is {1}×{1}; expected F {m}×{m}, G {n}×{n}",
                    t.f.nrows(),
                    t.g.nrows()
                )));
            }
        }
        Ok(Self {
            n,
            m,
            terms,
            symmetric_hint,
        })
    }

    /// Row dimension of the matricized vector (size of every `G`).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Column dimension of the matricized vector (size of every `F`).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn symmetric_hint(&self) -> bool {
        self.symmetric_hint
    }

    /// `A X` for a matricized input.
    pub fn apply_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("operator input rows", self.n, x.nrows())?;
        check_len("operator input cols", self.m, x.ncols())?;
        let mut y = DMatrix::zeros(self.n, self.m);
        for t in &self.terms {
            y += t.f.right_mul_transpose(&t.g.mul_dense(x));
        }
        Ok(y)
    }

    /// `Aᵀ X` for a matricized input.
    pub fn apply_matrix_transpose(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len("operator input rows", self.n, x.nrows())?;
        check_len("operator input cols", self.m, x.ncols())?;
        let mut y = DMatrix::zeros(self.n, self.m);
        for t in &self.terms {
            let gx = t.g.transpose_mul_dense(x);
            y += t.f.transpose_mul_dense(&gx.transpose()).transpose();
        }
        Ok(y)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator matvec input", self.dim(), x.len())?;
        let xm = DMatrix::from_column_slice(self.n, self.m, x);
        Ok(self.apply_matrix(&xm)?.as_slice().to_vec())
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("operator matvec input", self.dim(), x.len())?;
        let xm = DMatrix::from_column_slice(self.n, self.m, x);
        Ok(self.apply_matrix_transpose(&xm)?.as_slice().to_vec())
    }

    /// `A (L Rᵀ)` in factored form; the width grows by a factor `R`.
    pub fn apply_lowrank(&self, z: &LowRank) -> Result<LowRank> {
        check_len("low-rank left rows", self.n, z.nrows())?;
        check_len("low-rank right rows", self.m, z.ncols())?;
        let lefts: Vec<_> = self.terms.iter().map(|t| t.g.mul_dense(&z.left)).collect();
        let rights: Vec<_> = self.terms.iter().map(|t| t.f.mul_dense(&z.right)).collect();
        LowRank::new(
            hcat(&lefts.iter().collect::<Vec<_>>()),
            hcat(&rights.iter().collect::<Vec<_>>()),
        )
    }

    /// Dense `nm × nm` matrix; refuses `nm > DENSE_LIMIT` unless forced.
    pub fn densify(&self, force: bool) -> Result<DMatrix<f64>> {
        let size = self.dim();
        if size > DENSE_LIMIT && !force {
            return Err(Error::TooLarge {
                size,
                limit: DENSE_LIMIT,
            });
        }
        let mut a = DMatrix::zeros(size, size);
        for t in &self.terms {
            a += t.f.to_dense().kronecker(&t.g.to_dense());
        }
        Ok(a)
    }

    /// `‖A − Aᵀ‖_F / ‖A‖_F` on the densified operator.
    pub fn asymmetry(&self) -> Result<f64> {
        let a = self.densify(false)?;
        let norm = a.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        Ok((&a - a.transpose()).norm() / norm)
    }
}

/// One side of the local coordinate partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LocalBlock {
    /// `vec U_ξ`, length `n r`.
    V,
    /// `vec V_ξᵀ`, length `r m`.
    U,
    /// `vec S_ξ`, length `r²`.
    Vu,
}

impl LocalBlock {
    pub fn len(self, n: usize, m: usize, r: usize) -> usize {
        match self {
            LocalBlock::V => n * r,
            LocalBlock::U => r * m,
            LocalBlock::Vu => r * r,
        }
    }
}

impl fmt::Display for LocalBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LocalBlock::V => "v",
            LocalBlock::U => "u",
            LocalBlock::Vu => "vu",
        })
    }
}

impl FromStr for LocalBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "v" => Ok(LocalBlock::V),
            "u" => Ok(LocalBlock::U),
            "vu" | "s" => Ok(LocalBlock::Vu),
            other => Err(Error::UnknownBlock(other.to_string())),
        }
    }
}

/// A `(row, col)` block of the projected local operator, written `"v,u"` etc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId {
    pub row: LocalBlock,
    pub col: LocalBlock,
}

impl BlockId {
    pub const fn new(row: LocalBlock, col: LocalBlock) -> Self {
        Self { row, col }
    }

    pub fn all() -> [BlockId; 9] {
        use LocalBlock::*;
        let sides = [V, U, Vu];
        let mut out = [BlockId::new(V, V); 9];
        for (i, &row) in sides.iter().enumerate() {
            for (j, &col) in sides.iter().enumerate() {
                out[3 * i + j] = BlockId::new(row, col);
            }
        }
        out
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.row, self.col)
    }
}

impl FromStr for BlockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (row, col) = s.split_once(',').ok_or_else(|| Error::UnknownBlock(s.to_string()))?;
        let parse = |p: &str| p.parse::<LocalBlock>().map_err(|_| Error::UnknownBlock(s.to_string()));
        Ok(BlockId::new(parse(row)?, parse(col)?))
    }
}

/// Coordinates of a local vector as matrices: `U_ξ (n×r)`, `V_ξᵀ (r×m)`, `S_ξ (r×r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalParts {
    pub u_xi: DMatrix<f64>,
    pub vt_xi: DMatrix<f64>,
    pub s_xi: DMatrix<f64>,
}

impl LocalParts {
    pub fn zeros(n: usize, m: usize, r: usize) -> Self {
        Self {
            u_xi: DMatrix::zeros(n, r),
            vt_xi: DMatrix::zeros(r, m),
            s_xi: DMatrix::zeros(r, r),
        }
    }

    pub fn block(&self, b: LocalBlock) -> &DMatrix<f64> {
        match b {
            LocalBlock::V => &self.u_xi,
            LocalBlock::U => &self.vt_xi,
            LocalBlock::Vu => &self.s_xi,
        }
    }

    pub fn block_mut(&mut self, b: LocalBlock) -> &mut DMatrix<f64> {
        match b {
            LocalBlock::V => &mut self.u_xi,
            LocalBlock::U => &mut self.vt_xi,
            LocalBlock::Vu => &mut self.s_xi,
        }
    }
}

/// `Σ (Vᵀ F V) ⊗ G` applied to `vec(W)` with `W: n × r`.
pub fn block_matvec_vv(op: &KronSumOperator, v: &DMatrix<f64>, w: &[f64]) -> Result<Vec<f64>> {
    check_len("basis rows", op.m(), v.nrows())?;
    check_orthonormal("V", v)?;
    let r = v.ncols();
    check_len("block (v,v) input", op.n() * r, w.len())?;
    let wm = DMatrix::from_column_slice(op.n(), r, w);
    let mut out = DMatrix::zeros(op.n(), r);
    for t in &op.terms {
        let f_hat = t.f.mul_dense(v).transpose() * v;
        out += t.g.mul_dense(&wm) * f_hat;
    }
    Ok(out.as_slice().to_vec())
}

pub(crate) fn check_orthonormal(name: &str, q: &DMatrix<f64>) -> Result<()> {
    let defect = orthonormality_defect(q);
    if !(defect <= ORTHO_TOL) {
        return Err(Error::Precondition(format!(
            "{name} is not orthonormal: ‖{name}ᵀ{name} − I‖_F = {defect:e}"
        )));
    }
    Ok(())
}

/// Per-point cache of the one-sided and two-sided projected factors
/// `G U`, `F V`, `Uᵀ G U`, `Vᵀ Fᵀ V`, built once per base point.
#[derive(Debug, Clone)]
pub struct ProjectedFactors<'a> {
    op: &'a KronSumOperator,
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    gu: Vec<DMatrix<f64>>,
    fv: Vec<DMatrix<f64>>,
    g_hat: Vec<DMatrix<f64>>,
    f_hat: Vec<DMatrix<f64>>,
}

impl<'a> ProjectedFactors<'a> {
    pub fn new(op: &'a KronSumOperator, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Self> {
        check_len("U rows", op.n(), u.nrows())?;
        check_len("V rows", op.m(), v.nrows())?;
        check_len("V columns", u.ncols(), v.ncols())?;
        check_orthonormal("U", u)?;
        check_orthonormal("V", v)?;
        let mut gu = Vec::with_capacity(op.num_terms());
        let mut fv = Vec::with_capacity(op.num_terms());
        let mut g_hat = Vec::with_capacity(op.num_terms());
        let mut f_hat = Vec::with_capacity(op.num_terms());
        for t in op.terms() {
            let g = t.g.mul_dense(u);
            let f = t.f.mul_dense(v);
            g_hat.push(u.transpose() * &g);
            f_hat.push(f.transpose() * v);
            gu.push(g);
            fv.push(f);
        }
        Ok(Self {
            op,
            u: u.clone(),
            v: v.clone(),
            gu,
            fv,
            g_hat,
            f_hat,
        })
    }

    pub fn operator(&self) -> &'a KronSumOperator {
        self.op
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `Uᵀ G_α U` for every term.
    pub fn g_hat(&self) -> &[DMatrix<f64>] {
        &self.g_hat
    }

    /// `Vᵀ F_αᵀ V` for every term (so that `Σ (Vᵀ F V) ⊗ G` acts as `G W f̂`).
    pub fn f_hat(&self) -> &[DMatrix<f64>] {
        &self.f_hat
    }

    /// `G_α U` for every term.
    pub fn gu(&self) -> &[DMatrix<f64>] {
        &self.gu
    }

    /// `F_α V` for every term.
    pub fn fv(&self) -> &[DMatrix<f64>] {
        &self.fv
    }

    /// `Σ tr(S ĝ S f̂)` = `xᵀ A x` at `X = U S Vᵀ`.
    pub fn quadratic_form(&self, s: &DMatrix<f64>) -> f64 {
        self.g_hat
            .iter()
            .zip(&self.f_hat)
            .map(|(g, f)| (s.transpose() * g * s * f).trace())
            .sum()
    }

    /// `A X` in factored form `[G_α U S]_α [F_α V]_αᵀ` for `X = U S Vᵀ`.
    pub fn apply_point(&self, s: &DMatrix<f64>) -> LowRank {
        let lefts: Vec<_> = self.gu.iter().map(|g| g * s).collect();
        LowRank {
            left: hcat(&lefts.iter().collect::<Vec<_>>()),
            right: hcat(&self.fv.iter().collect::<Vec<_>>()),
        }
    }

    /// Apply one projected block to a matrix-shaped input.
    pub fn apply_block_matrix(&self, id: BlockId, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        use LocalBlock::*;
        let (n, m, r) = (self.op.n(), self.op.m(), self.rank());
        let shape = |b: LocalBlock| match b {
            V => (n, r),
            U => (r, m),
            Vu => (r, r),
        };
        let (er, ec) = shape(id.col);
        check_len("block input rows", er, w.nrows())?;
        check_len("block input cols", ec, w.ncols())?;
        let (or, oc) = shape(id.row);
        let mut out = DMatrix::zeros(or, oc);
        for (k, t) in self.op.terms().iter().enumerate() {
            let (gu, fv, gh, fh) = (&self.gu[k], &self.fv[k], &self.g_hat[k], &self.f_hat[k]);
            match (id.row, id.col) {
                (V, V) => out += t.g.mul_dense(w) * fh,
                (U, V) => out += self.u.transpose() * t.g.mul_dense(w) * fv.transpose(),
                (Vu, V) => out += self.u.transpose() * t.g.mul_dense(w) * fh,
                (V, U) => out += gu * (t.f.mul_dense(&w.transpose()).transpose() * &self.v),
                (U, U) => out += gh * t.f.mul_dense(&w.transpose()).transpose(),
                (Vu, U) => out += gh * (t.f.mul_dense(&w.transpose()).transpose() * &self.v),
                (V, Vu) => out += gu * w * fh,
                (U, Vu) => out += gh * w * fv.transpose(),
                (Vu, Vu) => out += gh * w * fh,
            }
        }
        Ok(out)
    }

    /// Apply one projected block to a flat column-major input.
    pub fn apply_block(&self, id: BlockId, w: &[f64]) -> Result<Vec<f64>> {
        let (n, m, r) = (self.op.n(), self.op.m(), self.rank());
        check_len("block input", id.col.len(n, m, r), w.len())?;
        let wm = match id.col {
            LocalBlock::V => DMatrix::from_column_slice(n, r, w),
            LocalBlock::U => DMatrix::from_column_slice(r, m, w),
            LocalBlock::Vu => DMatrix::from_column_slice(r, r, w),
        };
        Ok(self.apply_block_matrix(id, &wm)?.as_slice().to_vec())
    }

    /// Full local product `Eᵀ A E τ`, using that `E τ = U_ξ Vᵀ + U N` with
    /// `N = V_ξᵀ + S_ξ Vᵀ` has rank `2r`.
    pub fn apply_local(&self, x: &LocalParts) -> LocalParts {
        let r = self.rank();
        let (n, m) = (self.op.n(), self.op.m());
        let nmat = &x.vt_xi + &x.s_xi * self.v.transpose();
        let nt = nmat.transpose();
        let mut out = LocalParts::zeros(n, m, r);
        for (k, t) in self.op.terms().iter().enumerate() {
            let (gu, fv, gh, fh) = (&self.gu[k], &self.fv[k], &self.g_hat[k], &self.f_hat[k]);
            let gx = t.g.mul_dense(&x.u_xi);
            let fnt = t.f.mul_dense(&nt);
            let fn_v = fnt.transpose() * &self.v;
            let utgx = self.u.transpose() * &gx;
            out.u_xi += &gx * fh + gu * &fn_v;
            out.vt_xi += &utgx * fv.transpose() + gh * fnt.transpose();
            out.s_xi += &utgx * fh + gh * fn_v;
        }
        out
    }

    /// `Eᵀ E τ`, the shift contribution of the local operator.
    pub fn apply_gram(&self, x: &LocalParts) -> LocalParts {
        let utu = self.u.transpose() * &x.u_xi;
        let nmat = &x.vt_xi + &x.s_xi * self.v.transpose();
        let nv = &nmat * &self.v;
        LocalParts {
            u_xi: &x.u_xi + &self.u * &nv,
            vt_xi: &utu * self.v.transpose() + &nmat,
            s_xi: utu + nv,
        }
    }
}
