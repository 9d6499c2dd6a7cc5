//! Oracle and property suite run by `lrjd check` and the acceptance target.
//!
//! Every check builds small seeded instances and compares the matrix-free
//! machinery against dense assemblies or analytic facts.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::correction::{estimate_local_condition, CorrectionVariant, InnerSolve, LocalSystem};
use crate::dense;
use crate::eigensolvers::{dense_reference, run_lrjd, run_lrrqi, LineSearch, SolverConfig, SubspaceConfig, Target};
use crate::error::{Error, Result};
use crate::krylov::KrylovConfig;
use crate::lowrank::sorted_svd;
use crate::manifold::{project_to_n_tangent, retract, FixedRankPoint, LocalVector};
use crate::operator::{KronSumOperator, KronTerm, LocalParts, SparseFactor};
use crate::problems::{build_convection_diffusion, PdeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            other => Err(Error::Precondition(format!(
                "unknown check level `{other}` (fast or full)"
            ))),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Fast => "fast",
            Level::Full => "full",
        })
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub level: Level,
    pub seed: u64,
    /// Test hook: add a seeded component of this size along `U` to every
    /// inner solution before its gauge is checked.
    pub gauge_fault: Option<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            level: Level::Fast,
            seed: 0,
            gauge_fault: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn randn(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_symmetric(k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| randn(rng));
    (&a + a.transpose()) * 0.5
}

/// Two-term operator with random symmetric dense factors.
pub fn random_symmetric_operator(n: usize, m: usize, seed: u64) -> KronSumOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut term = || KronTerm {
        f: SparseFactor::from_dense(&random_symmetric(m, &mut rng)),
        g: SparseFactor::from_dense(&random_symmetric(n, &mut rng)),
    };
    let terms = vec![term(), term()];
    KronSumOperator::new(terms, true).expect("consistent random factors")
}

/// Random point with singular values `r, r − 1, …, 1` before normalization.
pub fn random_point(n: usize, m: usize, r: usize, seed: u64) -> FixedRankPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = FixedRankPoint::random(n, m, r, &mut rng).expect("valid rank");
    let core = DMatrix::from_fn(r, r, |i, j| if i == j { (r - i) as f64 } else { 0.0 });
    FixedRankPoint::from_factored(p.u(), &core, p.v(), r).expect("full-rank core")
}

/// Defects of the dense tangent projectors at one point.
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    pub idempotence: f64,
    pub self_adjointness: f64,
    /// `‖P_M xxᵀ − xxᵀ P_M‖`.
    pub commutation: f64,
    /// `‖P_N x‖`.
    pub annihilates_point: f64,
    /// Matrix-free projection against the dense projector on a random vector.
    pub matrix_free: f64,
    pub rank: usize,
    pub expected_rank: usize,
}

impl ProjectionReport {
    pub fn worst_defect(&self) -> f64 {
        [
            self.idempotence,
            self.self_adjointness,
            self.commutation,
            self.annihilates_point,
            self.matrix_free,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn projection_report(n: usize, m: usize, r: usize, seed: u64) -> Result<ProjectionReport> {
    let x = random_point(n, m, r, seed);
    let pm = dense::tangent_projector(&x);
    let pn = dense::intersection_projector(&x);
    let xv = DVector::from_vec(x.to_vec());
    let xx = &xv * xv.transpose();
    let mut worst_idem = 0.0f64;
    let mut worst_adj = 0.0f64;
    for p in [&pm, &pn] {
        worst_idem = worst_idem.max((p * p - p).norm());
        worst_adj = worst_adj.max((p - p.transpose()).norm());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let z: Vec<f64> = (0..n * m).map(|_| randn(&mut rng)).collect();
    let free = DVector::from_vec(project_to_n_tangent(&x, &z)?.to_vec(&x));
    let dense_proj = &pn * DVector::from_column_slice(&z);
    let rank = pn
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .filter(|&&v| v > 0.5)
        .count();
    Ok(ProjectionReport {
        idempotence: worst_idem,
        self_adjointness: worst_adj,
        commutation: (&pm * &xx - &xx * &pm).norm(),
        annihilates_point: (&pn * &xv).norm(),
        matrix_free: (free - dense_proj).norm(),
        rank,
        expected_rank: (n + m) * r - r * r - 1,
    })
}

/// `‖L τ₀‖ / ‖τ₀‖` for the gauge direction `τ₀ = [vec U; −vec Vᵀ; 0]`.
pub fn nullspace_defect(n: usize, m: usize, r: usize, seed: u64) -> Result<f64> {
    let op = random_symmetric_operator(n, m, seed);
    let x = random_point(n, m, r, seed + 1);
    let sys = LocalSystem::new(&op, &x, CorrectionVariant::JacobiDavidson)?;
    let tau = LocalVector::from_parts(&LocalParts {
        u_xi: x.u().clone(),
        vt_xi: -x.v().transpose(),
        s_xi: DMatrix::zeros(r, r),
    });
    Ok(sys.apply_unprojected(&tau).norm() / tau.norm())
}

/// Relative gap between the exact local solution mapped to the ambient space
/// and the dense pseudoinverse solution of the projected Newton system, plus
/// the relative mismatch of the matrix-free and dense local operators.
pub fn local_dense_mismatch(n: usize, m: usize, r: usize, seed: u64) -> Result<(f64, f64)> {
    let op = random_symmetric_operator(n, m, seed);
    let x = random_point(n, m, r, seed + 1);
    let sys = LocalSystem::new(&op, &x, CorrectionVariant::JacobiDavidson)?;
    let (xi, _) = sys.solve(&KrylovConfig::default(), InnerSolve::Exact)?;
    let expect = dense::newton_pseudoinverse_solution(&op, &x)?;
    let got = DVector::from_vec(xi.to_vec(&x));
    let sol = (&got - &expect).norm() / expect.norm();
    let dense_loc = dense::local_operator_from_blocks(&sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let tau = LocalVector::from_data(DVector::from_fn(x.local_dim(), |_, _| randn(&mut rng)), n, m, r)?;
    let want = &dense_loc * &tau.data;
    let op_err = (sys.apply_unprojected(&tau).data - &want).norm() / want.norm();
    Ok((sol, op_err))
}

/// Largest gauge defect of inexact inner solutions over the correction
/// variants, optionally with an injected fault.
pub fn gauge_defect(n: usize, m: usize, r: usize, seed: u64, fault: Option<f64>) -> Result<f64> {
    let op = random_symmetric_operator(n, m, seed);
    let x = random_point(n, m, r, seed + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
    let mut worst = 0.0f64;
    for variant in [CorrectionVariant::JacobiDavidson, CorrectionVariant::Davidson] {
        let sys = LocalSystem::new(&op, &x, variant)?;
        let (mut xi, _) = sys.solve(&KrylovConfig::with_budget(10), InnerSolve::Gmres)?;
        if let Some(size) = fault {
            let c = DMatrix::from_fn(r, r, |_, _| randn(&mut rng));
            xi.u_xi += x.u() * c * size;
        }
        worst = worst.max(xi.gauge_defect(&x) / (1.0 + xi.norm()));
    }
    Ok(worst)
}

/// Retraction at zero step and the log-log slope of `‖R(x, tξ) − (x + tξ)‖`
/// fitted over `t ∈ [1e-5, 1e-2]`.
pub fn retraction_report(n: usize, m: usize, r: usize, seed: u64) -> Result<(bool, f64)> {
    let x = random_point(n, m, r, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 4);
    let z: Vec<f64> = (0..n * m).map(|_| randn(&mut rng)).collect();
    let xi = project_to_n_tangent(&x, &z)?;
    let xi = xi.scale(1.0 / xi.norm());
    let zero_exact = retract(&x, &xi, 0.0)? == x;
    let xd = x.to_dense();
    let xid = xi.to_dense(&x);
    let ts: Vec<f64> = (0..=12).map(|i| 10f64.powf(-5.0 + 0.25 * i as f64)).collect();
    let mut pts = Vec::with_capacity(ts.len());
    for &t in &ts {
        let y = retract(&x, &xi, t)?.to_dense();
        // Sign is fixed by the point's normalization; compare to the closer one.
        let lin = &xd + &xid * t;
        let err = (&y - &lin).norm().min((&y + &lin).norm());
        pts.push((t.ln(), err.ln()));
    }
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / k, sy / k);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), p| {
        (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2))
    });
    Ok((zero_exact, num / den))
}

/// Largest distance (up to sign) between JD and RQI iterates under exact
/// inner solves, no subspace and no line search.
pub fn jd_rqi_gap(n: usize, m: usize, r: usize, iters: usize, seed: u64) -> Result<f64> {
    let op = random_symmetric_operator(n, m, seed);
    let x0 = random_point(n, m, r, seed + 1);
    let base = SolverConfig {
        rank: r,
        max_outer: iters,
        outer_tol: 0.0,
        exact_inner: true,
        record_iterates: true,
        stagnation_window: iters + 10,
        ..SolverConfig::default()
    };
    let jd_cfg = SolverConfig {
        subspace: SubspaceConfig {
            enabled: false,
            ..SubspaceConfig::default()
        },
        line_search: LineSearch::Off,
        ..base.clone()
    };
    let jd = run_lrjd(&op, &jd_cfg, Some(x0.clone()))?;
    let rqi = run_lrrqi(&op, &base, Some(x0))?;
    if jd.iterates.len() != rqi.iterates.len() || jd.iterates.len() != iters + 1 {
        return Err(Error::Solver(format!(
            "iterate counts differ: {} vs {}",
            jd.iterates.len(),
            rqi.iterates.len()
        )));
    }
    Ok(jd
        .iterates
        .iter()
        .zip(&rqi.iterates)
        .map(|(a, b)| a.distance_up_to_sign(b))
        .fold(0.0, f64::max))
}

/// Outcome of the lower bound on the projected local spectrum.
#[derive(Debug, Clone)]
pub struct PositivityReport {
    pub min_eig: f64,
    pub bound: f64,
    pub theta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PositivityReport {
    pub fn margin(&self) -> f64 {
        self.min_eig - self.bound
    }
}

/// Kronecker-sum operator plus a weak random coupling, so the bottom
/// eigenvector is close to rank one; the point is a perturbed rank-`r`
/// truncation of that eigenvector.
pub fn positivity_report(n: usize, r: usize, seed: u64, noise: f64) -> Result<PositivityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = random_symmetric(n, &mut rng);
    let g = random_symmetric(n, &mut rng);
    let h = random_symmetric(n, &mut rng) * 0.1;
    let k = random_symmetric(n, &mut rng);
    let op = KronSumOperator::new(
        vec![
            KronTerm {
                f: SparseFactor::from_dense(&f),
                g: SparseFactor::identity(n),
            },
            KronTerm {
                f: SparseFactor::identity(n),
                g: SparseFactor::from_dense(&g),
            },
            KronTerm {
                f: SparseFactor::from_dense(&h),
                g: SparseFactor::from_dense(&k),
            },
        ],
        true,
    )?;
    let a = op.densify(false)?;
    let eig = a.symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let (lambda1, lambda2) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
    let v = eig.eigenvectors.column(idx[0]);
    let z = DMatrix::from_column_slice(n, n, v.as_slice()) + DMatrix::from_fn(n, n, |_, _| noise * randn(&mut rng));
    let x = FixedRankPoint::from_dense(&z, r)?;
    let sys = LocalSystem::new(&op, &x, CorrectionVariant::JacobiDavidson)?;
    let theta = sys.rayleigh_quotient();
    let rep = estimate_local_condition(&sys)?;
    Ok(PositivityReport {
        min_eig: rep.min_eig,
        bound: lambda1 + lambda2 - 2.0 * theta,
        theta,
        lambda1,
        lambda2,
    })
}

/// Residual floor of a low-rank run against the residual of the best
/// rank-`r` approximation of the reference eigenvector.
#[derive(Debug, Clone)]
pub struct StagnationReport {
    pub lambda: f64,
    /// Smallest residual seen by the low-rank run.
    pub floor: f64,
    /// `‖A x_r − 𝕽(x_r) x_r‖` for the normalized rank-`r` SVD truncation `x_r`.
    pub truncation_residual: f64,
    /// `‖x − x_r‖` before normalization.
    pub truncation_error: f64,
    pub stagnated: bool,
    pub iterations: usize,
}

impl StagnationReport {
    pub fn ratio(&self) -> f64 {
        self.floor / self.truncation_residual
    }
}

/// Normalized rank-`r` SVD truncation of a length-`nm` vector, its residual
/// under `op` and the discarded tail norm.
pub fn truncation_residual(op: &KronSumOperator, x: &[f64], r: usize) -> Result<(f64, f64)> {
    let (n, m) = (op.n(), op.m());
    let xm = DMatrix::from_column_slice(n, m, x);
    let svd = sorted_svd(&xm);
    let tail = svd.s.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt();
    let mut xr = DMatrix::zeros(n, m);
    for i in 0..r.min(svd.s.len()) {
        xr += svd.u.column(i) * svd.v.column(i).transpose() * svd.s[i];
    }
    let nrm = xr.norm();
    xr /= nrm;
    let ax = op.apply_matrix(&xr)?;
    let theta = xr.dot(&ax);
    Ok(((ax - xr * theta).norm(), tail))
}

/// Configuration used for the convection–diffusion stagnation runs:
/// unpreconditioned inner solves and a zero correction shift until the
/// residual drops below one.
pub fn stagnation_config(rank: usize, budget: usize) -> SolverConfig {
    SolverConfig {
        rank,
        max_outer: 60,
        outer_tol: 1e-12,
        inner: KrylovConfig::with_budget(budget),
        early_shift: Some(0.0),
        early_shift_until: 1.0,
        ..SolverConfig::default()
    }
}

pub fn stagnation_report(n: usize, r: usize, budget: usize) -> Result<StagnationReport> {
    let op = build_convection_diffusion(&PdeSpec {
        n,
        ..PdeSpec::default()
    })?
    .operator;
    let rf = dense_reference(&op, Target::SmallestRQ)?;
    let (truncation_residual, truncation_error) = truncation_residual(&op, rf.x.as_slice(), r)?;
    let res = run_lrjd(&op, &stagnation_config(r, budget), None)?;
    Ok(StagnationReport {
        lambda: rf.lambda,
        floor: res.trace.min_resid(),
        truncation_residual,
        truncation_error,
        stagnated: res.stagnated,
        iterations: res.trace.len(),
    })
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> Outcome {
    match result {
        Ok((passed, detail)) => Outcome { name, passed, detail },
        Err(e) => Outcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Run the suite; the full level adds more seeds and the n = 150 stagnation check.
pub fn run_checks(opts: &CheckOptions) -> Vec<Outcome> {
    let seeds: Vec<u64> = match opts.level {
        Level::Fast => (0..3).map(|i| opts.seed + 101 * i).collect(),
        Level::Full => (0..10).map(|i| opts.seed + 101 * i).collect(),
    };
    let mut out = Vec::new();
    out.push(outcome(
        "projection",
        (|| {
            let mut worst = 0.0f64;
            for &s in &seeds {
                let rep = projection_report(6, 6, 2, s)?;
                if rep.rank != rep.expected_rank {
                    return Ok((
                        false,
                        format!("seed {s}: tangent rank {} != {}", rep.rank, rep.expected_rank),
                    ));
                }
                worst = worst.max(rep.worst_defect());
            }
            Ok((
                worst <= 1e-10,
                format!("worst defect {worst:.2e} (tol 1e-10), rank (n+m)r-r^2-1"),
            ))
        })(),
    ));
    out.push(outcome(
        "nullspace",
        (|| {
            let mut worst = 0.0f64;
            for &s in &seeds {
                worst = worst.max(nullspace_defect(6, 6, 2, s)?);
            }
            Ok((worst <= 1e-10, format!("relative image {worst:.2e} (tol 1e-10)")))
        })(),
    ));
    out.push(outcome(
        "local_vs_dense",
        (|| {
            let (mut sol, mut op) = (0.0f64, 0.0f64);
            for &s in &seeds {
                let (a, b) = local_dense_mismatch(6, 6, 2, s)?;
                sol = sol.max(a);
                op = op.max(b);
            }
            Ok((
                sol <= 1e-9 && op <= 1e-12,
                format!("solution rel err {sol:.2e} (tol 1e-9), operator rel err {op:.2e} (tol 1e-12)"),
            ))
        })(),
    ));
    out.push(outcome(
        "gauge",
        (|| {
            let mut worst = 0.0f64;
            for &s in &seeds {
                worst = worst.max(gauge_defect(6, 6, 2, s, opts.gauge_fault)?);
            }
            Ok((worst <= 1e-10, format!("gauge defect {worst:.2e} (tol 1e-10)")))
        })(),
    ));
    out.push(outcome(
        "retraction",
        (|| {
            let mut min_slope = f64::INFINITY;
            for &s in &seeds {
                let (zero, slope) = retraction_report(6, 6, 2, s)?;
                if !zero {
                    return Ok((false, format!("seed {s}: R(X, 0) != X")));
                }
                min_slope = min_slope.min(slope);
            }
            Ok((
                min_slope >= 1.9,
                format!("R(X,0)=X, min slope {min_slope:.3} (need >= 1.9)"),
            ))
        })(),
    ));
    out.push(outcome(
        "jd_equals_rqi",
        (|| {
            let mut worst = 0.0f64;
            for &s in &seeds {
                worst = worst.max(jd_rqi_gap(6, 6, 2, 5, s)?);
            }
            Ok((
                worst <= 1e-8,
                format!("max iterate distance {worst:.2e} over 5 steps (tol 1e-8)"),
            ))
        })(),
    ));
    out.push(outcome(
        "positivity_bound",
        (|| {
            let mut worst = f64::INFINITY;
            let mut used = 0;
            for &s in &seeds {
                let rep = positivity_report(6, 2, s, 0.02)?;
                if rep.theta - rep.lambda1 >= rep.lambda2 - rep.theta {
                    continue;
                }
                used += 1;
                worst = worst.min(rep.margin());
            }
            if used == 0 {
                return Ok((false, "no instance had the Rayleigh quotient below the midpoint".into()));
            }
            Ok((
                worst >= -1e-8,
                format!("min margin {worst:.2e} over {used} instances (need >= -1e-8)"),
            ))
        })(),
    ));
    if opts.level == Level::Full {
        out.push(outcome(
            "stagnation_n150",
            (|| {
                let start = Instant::now();
                let rep = stagnation_report(150, 5, 30)?;
                let ratio = rep.ratio();
                Ok((
                    rep.stagnated && (1.0 / 3.0..=3.0).contains(&ratio),
                    format!(
                        "floor {:.3e}, truncation residual {:.3e}, ratio {ratio:.2} (within 3x), {:.1}s",
                        rep.floor,
                        rep.truncation_residual,
                        start.elapsed().as_secs_f64()
                    ),
                ))
            })(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suite_passes() {
        let out = run_checks(&CheckOptions::default());
        for o in &out {
            assert!(o.passed, "{o}");
        }
        assert_eq!(out.len(), 7);
    }

    #[test]
    fn injected_gauge_fault_is_caught() {
        let out = run_checks(&CheckOptions {
            gauge_fault: Some(1e-3),
            ..CheckOptions::default()
        });
        let gauge = out.iter().find(|o| o.name == "gauge").unwrap();
        assert!(!gauge.passed, "{gauge}");
        assert!(out.iter().filter(|o| o.name != "gauge").all(|o| o.passed));
    }

    #[test]
    fn level_parses() {
        assert_eq!("full".parse::<Level>().unwrap(), Level::Full);
        assert!("slow".parse::<Level>().is_err());
    }
}
