//! Outer iterations: low-rank Jacobi–Davidson, Rayleigh quotient iteration,
//! Davidson and ALS, plus full-space solvers used as references.

mod als;
mod full;
mod lowrank;

pub use als::{als_half_sweep, run_als, AlsSide};
pub use full::{dense_reference, full_jd, run_dense_jd, DenseReference, FullJdOptions, FullJdResult};
pub use lowrank::{exact_line_search, retract_full, run_lr_davidson, run_lrjd, run_lrrqi};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::krylov::KrylovConfig;
use crate::manifold::FixedRankPoint;
use crate::operator::KronSumOperator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lrjd,
    Lrrqi,
    LrDavidson,
    Als,
    DenseJd,
    DenseReference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lrjd => "lrjd",
            Method::Lrrqi => "lrrqi",
            Method::LrDavidson => "lrdavidson",
            Method::Als => "als",
            Method::DenseJd => "dense_jd",
            Method::DenseReference => "dense_reference",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lrjd" | "jd" => Method::Lrjd,
            "lrrqi" | "rqi" => Method::Lrrqi,
            "lrdavidson" | "davidson" => Method::LrDavidson,
            "als" => Method::Als,
            "dense_jd" | "densejd" => Method::DenseJd,
            "dense_reference" | "densereference" | "reference" => Method::DenseReference,
            other => return Err(Error::Precondition(format!("unknown method '{other}'"))),
        })
    }
}

/// Preconditioner for the local systems.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecondChoice {
    None,
    /// Block-Jacobi with exponential-sum inner inverses of `K` terms.
    ExpSum {
        k: usize,
    },
    /// Block-Jacobi with dense LU of each diagonal block.
    DenseSmall,
    /// Block-Jacobi with an inner GMRES of the given budget per block.
    InnerKrylov {
        budget: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoeffOpt {
    /// Use the Ritz coefficients as they are.
    RitzOnly,
    /// Rescale the coefficient of the newest direction to minimize the retracted Rayleigh quotient.
    LastCoeffLineSearch,
    /// Rescale the whole update, then each coefficient in turn.
    SequentialLineSearch,
}

/// How earlier search directions are carried to the next iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubspaceMode {
    /// Projected onto the new tangent space; the Ritz vector is a tangent vector.
    Transported,
    /// Kept as ambient low-rank matrices; the Ritz vector is truncated to rank `r`.
    Unprojected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceConfig {
    pub enabled: bool,
    pub max_basis: usize,
    pub restart_keep: usize,
    pub coeff_opt: CoeffOpt,
    pub mode: SubspaceMode,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_basis: 30,
            restart_keep: 10,
            coeff_opt: CoeffOpt::RitzOnly,
            mode: SubspaceMode::Transported,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    /// Full step.
    Off,
    /// Closed-form minimizer of the Rayleigh quotient on `x + α ξ`.
    ExactQuadratic,
    /// Backtracking on the retracted Rayleigh quotient.
    Armijo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Smallest (real part of the) Ritz value.
    SmallestRQ,
    ClosestTo(f64),
}

impl Target {
    /// Ordering key: smaller is better.
    pub fn key(self, theta: f64) -> f64 {
        match self {
            Target::SmallestRQ => theta,
            Target::ClosestTo(s) => (theta - s).abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub rank: usize,
    pub max_outer: usize,
    /// Stop when `‖A x − θ x‖` drops to this value.
    pub outer_tol: f64,
    pub inner: KrylovConfig,
    pub precond: PrecondChoice,
    /// Shift subtracted inside the preconditioner blocks.
    pub precond_shift: f64,
    pub subspace: SubspaceConfig,
    pub line_search: LineSearch,
    pub target: Target,
    pub seed: u64,
    /// Solve local systems by dense factorization (small instances only).
    pub exact_inner: bool,
    pub stagnation_window: usize,
    /// Geometric-mean residual reduction per iteration below which the run stagnates.
    pub stagnation_ratio: f64,
    pub record_iterates: bool,
    /// Outer iterations of the inner eigensolver in each ALS half-sweep.
    pub als_inner_outer: usize,
    /// Fixed shift for the correction equation while the residual is above
    /// `early_shift_until`; steers a poor start toward the target end of the spectrum.
    pub early_shift: Option<f64>,
    pub early_shift_until: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: Method::Lrjd,
            rank: 1,
            max_outer: 50,
            outer_tol: 1e-10,
            inner: KrylovConfig::with_budget(30),
            precond: PrecondChoice::None,
            precond_shift: 0.0,
            subspace: SubspaceConfig::default(),
            line_search: LineSearch::ExactQuadratic,
            target: Target::SmallestRQ,
            seed: 0,
            exact_inner: false,
            stagnation_window: 5,
            stagnation_ratio: 1.02,
            record_iterates: false,
            als_inner_outer: 10,
            early_shift: None,
            early_shift_until: 1.0,
        }
    }
}

impl SolverConfig {
    /// Shift for the correction equation at Rayleigh quotient `theta` and residual `resid`.
    pub fn correction_shift(&self, theta: f64, resid: f64) -> f64 {
        match self.early_shift {
            Some(s) if resid > self.early_shift_until => s,
            _ => theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Precondition("rank must be at least 1".into()));
        }
        if self.subspace.max_basis < 2 {
            return Err(Error::Precondition("max_basis must be at least 2".into()));
        }
        if self.subspace.restart_keep >= self.subspace.max_basis {
            return Err(Error::Precondition(format!(
                "restart_keep {} must be below max_basis {}",
                self.subspace.restart_keep, self.subspace.max_basis
            )));
        }
        if !(self.outer_tol >= 0.0) {
            return Err(Error::Precondition("outer_tol must be nonnegative".into()));
        }
        if self.stagnation_window == 0 {
            return Err(Error::Precondition("stagnation_window must be positive".into()));
        }
        if let PrecondChoice::ExpSum { k: 0 } | PrecondChoice::InnerKrylov { budget: 0 } = self.precond {
            return Err(Error::Precondition("preconditioner size must be positive".into()));
        }
        self.inner.validate()
    }
}

/// Seeded random starting point shared by all methods.
pub fn initial_point(op: &KronSumOperator, cfg: &SolverConfig) -> Result<FixedRankPoint> {
    if cfg.rank > op.n().min(op.m()) {
        return Err(Error::Precondition(format!(
            "rank {} exceeds min(n, m) = {}",
            cfg.rank,
            op.n().min(op.m())
        )));
    }
    FixedRankPoint::random(op.n(), op.m(), cfg.rank, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Selected Ritz value and unit coefficient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RitzPair {
    pub theta: f64,
    pub coeffs: DVector<f64>,
}

/// Ritz pair of the projected matrix `h` closest to `target`. For
/// nonsymmetric `h`, complex Ritz values are passed over in favor of real ones.
pub fn select_ritz(h: &DMatrix<f64>, symmetric: bool, target: Target) -> Result<RitzPair> {
    let b = h.nrows();
    if b == 0 || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("empty or non-finite projected matrix".into()));
    }
    let mut c;
    let theta;
    if symmetric {
        let eig = ((h + h.transpose()) * 0.5).symmetric_eigen();
        let k = (0..b)
            .min_by(|&i, &j| {
                target
                    .key(eig.eigenvalues[i])
                    .total_cmp(&target.key(eig.eigenvalues[j]))
            })
            .expect("b > 0");
        theta = eig.eigenvalues[k];
        c = eig.eigenvectors.column(k).into_owned();
    } else {
        let ev = h.clone().complex_eigenvalues();
        let scale = ev.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let real: Vec<f64> = ev.iter().filter(|z| z.im.abs() <= 1e-8 * scale).map(|z| z.re).collect();
        let pool: Vec<f64> = if real.is_empty() {
            ev.iter().map(|z| z.re).collect()
        } else {
            real
        };
        theta = pool
            .into_iter()
            .min_by(|a, b| target.key(*a).total_cmp(&target.key(*b)))
            .expect("b > 0");
        let shifted = h - DMatrix::identity(b, b) * theta;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.expect("requested");
        let k = svd.singular_values.imin();
        c = vt.row(k).transpose();
    }
    let pivot = c
        .iter()
        .copied()
        .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
    if pivot < 0.0 {
        c.neg_mut();
    }
    let nrm = c.norm();
    Ok(RitzPair { theta, coeffs: c / nrm })
}

/// The unit eigenvector approximation a run returns.
#[derive(Debug, Clone, PartialEq)]
pub enum Eigenvector {
    LowRank(FixedRankPoint),
    Full(DVector<f64>),
}

impl Eigenvector {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Eigenvector::LowRank(p) => p.to_vec(),
            Eigenvector::Full(v) => v.as_slice().to_vec(),
        }
    }
}

/// One row per outer iteration; row `k` describes iterate `x_k` and the
/// step that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub theta: f64,
    pub resid: f64,
    pub inner_iters: usize,
    pub basis: usize,
    pub alpha: f64,
    pub time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

pub const TRACE_HEADER: &str = "iter,theta,resid,inner_iters,basis,alpha,time_s";

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// First iteration whose residual is at most `tol`.
    pub fn iters_to(&self, tol: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.resid <= tol).map(|r| r.iter)
    }

    pub fn time_to(&self, tol: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.resid <= tol).map(|r| r.time_s)
    }

    pub fn min_resid(&self) -> f64 {
        self.rows.iter().map(|r| r.resid).fold(f64::INFINITY, f64::min)
    }

    /// CSV with 17 significant digits.
    pub fn to_csv(&self) -> String {
        self.csv(true)
    }

    /// The same CSV without the timing column.
    pub fn to_csv_without_time(&self) -> String {
        self.csv(false)
    }

    fn csv(&self, with_time: bool) -> String {
        let mut out = String::new();
        out.push_str(if with_time {
            TRACE_HEADER
        } else {
            "iter,theta,resid,inner_iters,basis,alpha"
        });
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{},{},{:.16e}",
                r.iter, r.theta, r.resid, r.inner_iters, r.basis, r.alpha
            ));
            if with_time {
                out.push_str(&format!(",{:.16e}", r.time_s));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub vector: Eigenvector,
    pub theta: f64,
    pub residual_norm: f64,
    pub converged: bool,
    pub stagnated: bool,
    pub trace: ConvergenceTrace,
    /// Iterates `x_0, x_1, …` when requested.
    pub iterates: Vec<FixedRankPoint>,
    /// Outer iterations whose preconditioner could not be built.
    pub precond_fallbacks: usize,
}

impl EigResult {
    pub fn point(&self) -> Option<&FixedRankPoint> {
        match &self.vector {
            Eigenvector::LowRank(p) => Some(p),
            Eigenvector::Full(_) => None,
        }
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }
}

/// Trace bookkeeping and the stopping rules shared by all drivers.
pub(crate) struct Monitor {
    start: Instant,
    trace: ConvergenceTrace,
    tol: f64,
    window: usize,
    ratio: f64,
}

pub(crate) enum Status {
    Converged,
    Stagnated,
    Continue,
}

impl Monitor {
    pub(crate) fn new(tol: f64, window: usize, ratio: f64) -> Self {
        Self {
            start: Instant::now(),
            trace: ConvergenceTrace::default(),
            tol,
            window,
            ratio,
        }
    }

    pub(crate) fn from_config(cfg: &SolverConfig) -> Self {
        Self::new(cfg.outer_tol, cfg.stagnation_window, cfg.stagnation_ratio)
    }

    pub(crate) fn record(
        &mut self,
        theta: f64,
        resid: f64,
        inner_iters: usize,
        basis: usize,
        alpha: f64,
    ) -> Result<Status> {
        let iter = self.trace.len();
        if !theta.is_finite() || !resid.is_finite() {
            return Err(Error::NumericalFailure {
                iter,
                msg: format!("non-finite Rayleigh quotient {theta} or residual {resid}"),
            });
        }
        self.trace.rows.push(TraceRow {
            iter,
            theta,
            resid,
            inner_iters,
            basis,
            alpha,
            time_s: self.start.elapsed().as_secs_f64(),
        });
        if resid <= self.tol {
            return Ok(Status::Converged);
        }
        // Improvement of the best residual so far, so transient rises do not count.
        let best: Vec<f64> = self
            .trace
            .rows
            .iter()
            .scan(f64::INFINITY, |b, r| {
                *b = b.min(r.resid);
                Some(*b)
            })
            .collect();
        let w = self.window;
        if best.len() > w {
            let k = best.len() - 1;
            let gain = (best[k - w] / best[k]).powf(1.0 / w as f64);
            if gain < self.ratio {
                return Ok(Status::Stagnated);
            }
        }
        Ok(Status::Continue)
    }

    pub(crate) fn into_trace(self) -> ConvergenceTrace {
        self.trace
    }
}

/// Run the method selected in `cfg`.
pub fn solve(op: &KronSumOperator, cfg: &SolverConfig, x0: Option<FixedRankPoint>) -> Result<EigResult> {
    match cfg.method {
        Method::Lrjd => run_lrjd(op, cfg, x0),
        Method::Lrrqi => run_lrrqi(op, cfg, x0),
        Method::LrDavidson => run_lr_davidson(op, cfg, x0),
        Method::Als => run_als(op, cfg, x0),
        Method::DenseJd => {
            let start = match x0 {
                Some(p) => p,
                None => initial_point(op, cfg)?,
            };
            run_dense_jd(op, cfg, Some(DVector::from_vec(start.to_vec())))
        }
        Method::DenseReference => {
            let start = Instant::now();
            let rf = dense_reference(op, cfg.target)?;
            let mut trace = ConvergenceTrace::default();
            trace.rows.push(TraceRow {
                iter: 0,
                theta: rf.lambda,
                resid: rf.residual,
                inner_iters: 0,
                basis: 0,
                alpha: 0.0,
                time_s: start.elapsed().as_secs_f64(),
            });
            Ok(EigResult {
                vector: Eigenvector::Full(rf.x),
                theta: rf.lambda,
                residual_norm: rf.residual,
                converged: true,
                stagnated: false,
                trace,
                iterates: Vec::new(),
                precond_fallbacks: 0,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ritz_selection_symmetric_and_target() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 5.0]);
        let p = select_ritz(&h, true, Target::SmallestRQ).unwrap();
        assert_eq!(p.theta, -1.0);
        assert!((p.coeffs[1] - 1.0).abs() < 1e-15);
        let q = select_ritz(&h, true, Target::ClosestTo(4.0)).unwrap();
        assert_eq!(q.theta, 5.0);
    }

    #[test]
    fn ritz_selection_skips_complex_pairs() {
        // Rotation block with eigenvalues ±i plus a real eigenvalue 3.
        let h = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0]);
        let p = select_ritz(&h, false, Target::SmallestRQ).unwrap();
        assert!((p.theta - 3.0).abs() < 1e-12);
        assert!((&h * &p.coeffs - &p.coeffs * p.theta).norm() < 1e-10);
        assert!((p.coeffs.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonsymmetric_ritz_vector_is_an_eigenvector() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.5, 0.0, 3.0, 1.0, 0.0, 0.0, -2.0]);
        let p = select_ritz(&h, false, Target::SmallestRQ).unwrap();
        assert!((p.theta + 2.0).abs() < 1e-12);
        assert!((&h * &p.coeffs - &p.coeffs * p.theta).norm() < 1e-10);
    }

    #[test]
    fn stagnation_rule() {
        let mut m = Monitor::new(1e-12, 5, 1.02);
        for k in 0..5 {
            assert!(matches!(
                m.record(1.0, 10f64.powi(-k), 0, 0, 1.0).unwrap(),
                Status::Continue
            ));
        }
        for _ in 0..5 {
            let s = m.record(1.0, 1e-4, 0, 0, 1.0).unwrap();
            if let Status::Stagnated = s {
                return;
            }
        }
        panic!("flat residuals were not flagged");
    }

    #[test]
    fn csv_round_numbers() {
        let mut m = Monitor::new(0.0, 5, 1.02);
        m.record(0.1, 2.0, 3, 4, 0.5).unwrap();
        let csv = m.into_trace().to_csv_without_time();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,theta,resid,inner_iters,basis,alpha"));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        assert_eq!(row[1].parse::<f64>().unwrap(), 0.1);
        assert_eq!(row[3], "3");
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            rank: 0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let mut bad = SolverConfig::default();
        bad.subspace.restart_keep = bad.subspace.max_basis;
        assert!(bad.validate().is_err());
        assert_eq!("LRJD".parse::<Method>().unwrap(), Method::Lrjd);
        assert!("nope".parse::<Method>().is_err());
    }
}
