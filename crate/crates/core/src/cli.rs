//! Config-driven commands behind the `lrjd` binary.
//!
//! Configs are flat `key = value` text with dotted sections; `#` starts a
//! comment. Relative paths resolve against the config file's directory.
//!
//! ```text
//! problem.kind = convection_diffusion   # or laplacian
//! problem.n = 150
//! solver.method = lrjd
//! solver.rank = 5
//! output.trace = trace.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::check::{run_checks, truncation_residual, CheckOptions, Level};
use crate::eigensolvers::{
    dense_reference, initial_point, solve, CoeffOpt, EigResult, LineSearch, Method, PrecondChoice, SolverConfig,
    SubspaceMode, Target,
};
use crate::error::{Error, Result};
use crate::io::{load_operator, parse_key_values, write_vector};
use crate::operator::KronSumOperator;
use crate::problems::{build_convection_diffusion, build_laplacian2d, PdeSpec, Potential};

/// Environment variable that overrides `solver.seed`.
pub const SEED_ENV: &str = "LRJD_SEED";

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    ConvectionDiffusion(PdeSpec),
    Laplacian { n: usize, m: usize },
    Manifest(PathBuf),
}

impl ProblemSource {
    pub fn build(&self) -> Result<KronSumOperator> {
        match self {
            ProblemSource::ConvectionDiffusion(spec) => Ok(build_convection_diffusion(spec)?.operator),
            ProblemSource::Laplacian { n, m } => build_laplacian2d(*n, *m),
            ProblemSource::Manifest(p) => load_operator(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub solver: SolverConfig,
    pub trace: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Directory for per-variant traces of `compare`.
    pub dir: Option<PathBuf>,
    pub merged: Option<PathBuf>,
    /// Reference vector written by `oracle`.
    pub vector: Option<PathBuf>,
    pub variants: Vec<Variant>,
    /// Residual level used to rank comparison variants.
    pub compare_tol: f64,
}

type Entries = BTreeMap<String, (usize, String)>;

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| cfg_err(line, format!("invalid value `{v}` for `{key}`")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(cfg_err(line, format!("`{key}` must be true or false, got `{v}`"))),
    }
}

/// Apply one `solver.*` key (without the prefix) to a config.
fn apply_solver_key(cfg: &mut SolverConfig, key: &str, v: &str, line: usize) -> Result<()> {
    let full = format!("solver.{key}");
    let k = full.as_str();
    match key {
        "method" => cfg.method = Method::from_str(v).map_err(|e| cfg_err(line, e.to_string()))?,
        "rank" => cfg.rank = parse_value(line, k, v)?,
        "max_outer" => cfg.max_outer = parse_value(line, k, v)?,
        "outer_tol" => cfg.outer_tol = parse_value(line, k, v)?,
        "inner_budget" => cfg.inner.max_iters = parse_value(line, k, v)?,
        "inner_tol" => cfg.inner.rel_tol = parse_value(line, k, v)?,
        "inner_restart" => {
            cfg.inner.restart = match v {
                "none" => None,
                _ => Some(parse_value(line, k, v)?),
            }
        }
        "precond" => {
            cfg.precond = match v {
                "none" => PrecondChoice::None,
                "expsum" => PrecondChoice::ExpSum { k: 20 },
                "dense_small" => PrecondChoice::DenseSmall,
                "inner_krylov" => PrecondChoice::InnerKrylov { budget: 20 },
                _ => return Err(cfg_err(line, format!("unknown preconditioner `{v}`"))),
            }
        }
        "precond_k" => match &mut cfg.precond {
            PrecondChoice::ExpSum { k: terms } => *terms = parse_value(line, k, v)?,
            _ => {
                return Err(cfg_err(
                    line,
                    "`solver.precond_k` needs `solver.precond = expsum` first",
                ))
            }
        },
        "precond_budget" => match &mut cfg.precond {
            PrecondChoice::InnerKrylov { budget } => *budget = parse_value(line, k, v)?,
            _ => {
                return Err(cfg_err(
                    line,
                    "`solver.precond_budget` needs `solver.precond = inner_krylov` first",
                ))
            }
        },
        "precond_shift" => cfg.precond_shift = parse_value(line, k, v)?,
        "subspace" => cfg.subspace.enabled = parse_bool(line, k, v)?,
        "max_basis" => cfg.subspace.max_basis = parse_value(line, k, v)?,
        "restart_keep" => cfg.subspace.restart_keep = parse_value(line, k, v)?,
        "coeff_opt" => {
            cfg.subspace.coeff_opt = match v {
                "ritz" => CoeffOpt::RitzOnly,
                "last" => CoeffOpt::LastCoeffLineSearch,
                "sequential" => CoeffOpt::SequentialLineSearch,
                _ => {
                    return Err(cfg_err(
                        line,
                        format!("unknown coefficient mode `{v}` (ritz, last, sequential)"),
                    ))
                }
            }
        }
        "subspace_mode" => {
            cfg.subspace.mode = match v {
                "transported" => SubspaceMode::Transported,
                "unprojected" => SubspaceMode::Unprojected,
                _ => return Err(cfg_err(line, format!("unknown subspace mode `{v}`"))),
            }
        }
        "line_search" => {
            cfg.line_search = match v {
                "off" => LineSearch::Off,
                "exact" => LineSearch::ExactQuadratic,
                "armijo" => LineSearch::Armijo,
                _ => return Err(cfg_err(line, format!("unknown line search `{v}` (off, exact, armijo)"))),
            }
        }
        "target" => {
            cfg.target = match v.split_once(':') {
                None if v == "smallest" => Target::SmallestRQ,
                Some(("closest", s)) => Target::ClosestTo(parse_value(line, k, s.trim())?),
                _ => {
                    return Err(cfg_err(
                        line,
                        format!("target must be `smallest` or `closest:<value>`, got `{v}`"),
                    ))
                }
            }
        }
        "seed" => cfg.seed = parse_value(line, k, v)?,
        "exact_inner" => cfg.exact_inner = parse_bool(line, k, v)?,
        "stagnation_window" => cfg.stagnation_window = parse_value(line, k, v)?,
        "stagnation_ratio" => cfg.stagnation_ratio = parse_value(line, k, v)?,
        "als_inner_outer" => cfg.als_inner_outer = parse_value(line, k, v)?,
        "early_shift" => {
            cfg.early_shift = match v {
                "none" => None,
                _ => Some(parse_value(line, k, v)?),
            }
        }
        "early_shift_until" => cfg.early_shift_until = parse_value(line, k, v)?,
        _ => return Err(cfg_err(line, format!("unknown key `{full}`"))),
    }
    Ok(())
}

/// Keys are applied in this order so `precond_k` can follow `precond`.
fn ordered<'a>(entries: impl Iterator<Item = (&'a str, &'a (usize, String))>) -> Vec<(&'a str, usize, &'a str)> {
    let mut v: Vec<_> = entries.map(|(k, (l, val))| (k, *l, val.as_str())).collect();
    v.sort_by_key(|&(_, line, _)| line);
    v
}

fn parse_problem(entries: &Entries, base: &Path) -> Result<ProblemSource> {
    let get = |k: &str| entries.get(k);
    let problem_keys: Vec<(&str, usize)> = entries
        .iter()
        .filter(|(k, _)| k.starts_with("problem."))
        .map(|(k, (l, _))| (k.as_str(), *l))
        .collect();
    if let Some((line, path)) = get("problem.manifest") {
        if let Some(&(other, l)) = problem_keys.iter().find(|(k, _)| *k != "problem.manifest") {
            return Err(cfg_err(
                l.max(*line),
                format!("`{other}` conflicts with `problem.manifest`"),
            ));
        }
        return Ok(ProblemSource::Manifest(base.join(path)));
    }
    let kind = get("problem.kind").map_or("convection_diffusion", |(_, v)| v.as_str());
    let n = match get("problem.n") {
        Some((l, v)) => parse_value(*l, "problem.n", v)?,
        None => PdeSpec::default().n,
    };
    match kind {
        "laplacian" => {
            for &(k, l) in &problem_keys {
                if !matches!(k, "problem.kind" | "problem.n" | "problem.m") {
                    return Err(cfg_err(l, format!("`{k}` does not apply to the Laplacian")));
                }
            }
            let m = match get("problem.m") {
                Some((l, v)) => parse_value(*l, "problem.m", v)?,
                None => n,
            };
            Ok(ProblemSource::Laplacian { n, m })
        }
        "convection_diffusion" => {
            let mut spec = PdeSpec {
                n,
                ..PdeSpec::default()
            };
            for &(k, l) in &problem_keys {
                let v = entries[k].1.as_str();
                match k {
                    "problem.kind" | "problem.n" => {}
                    "problem.convection" => spec.convection = parse_bool(l, k, v)?,
                    "problem.svd_tol" => spec.svd_tol = parse_value(l, k, v)?,
                    "problem.potential_rank_cap" => spec.potential_rank_cap = Some(parse_value(l, k, v)?),
                    "problem.potential" => {
                        spec.potential = match v.split_once(':') {
                            None if v == "none" => Potential::None,
                            None if v == "exp_radial" => Potential::ExpRadial { scale: 10.0 },
                            Some(("exp_radial", s)) => Potential::ExpRadial {
                                scale: parse_value(l, k, s.trim())?,
                            },
                            _ => {
                                return Err(cfg_err(
                                    l,
                                    format!("potential must be `none` or `exp_radial[:scale]`, got `{v}`"),
                                ))
                            }
                        }
                    }
                    _ => return Err(cfg_err(l, format!("unknown key `{k}`"))),
                }
            }
            spec.validate()
                .map_err(|e| cfg_err(get("problem.n").map_or(0, |(l, _)| *l), e.to_string()))?;
            Ok(ProblemSource::ConvectionDiffusion(spec))
        }
        other => Err(cfg_err(
            get("problem.kind").map_or(0, |(l, _)| *l),
            format!("unknown problem kind `{other}` (convection_diffusion or laplacian)"),
        )),
    }
}

/// Parse a run config; `LRJD_SEED` (if set) overrides every seed.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let seed_override = match std::env::var(SEED_ENV) {
        Ok(s) => Some(
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Precondition(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?,
        ),
        Err(_) => None,
    };
    parse_config_str(&text, path, seed_override)
}

/// Parse config text. `origin` is used for relative paths and messages.
pub fn parse_config_str(text: &str, origin: &Path, seed_override: Option<u64>) -> Result<RunConfig> {
    let entries = parse_key_values(origin, text).map_err(|e| match e {
        Error::Parse { line, msg, .. } => cfg_err(line, msg),
        other => other,
    })?;
    let base = origin.parent().map(Path::to_path_buf).unwrap_or_default();
    for (k, (l, _)) in &entries {
        let section = k.split('.').next().unwrap_or("");
        if !matches!(section, "problem" | "solver" | "output" | "compare") || !k.contains('.') {
            return Err(cfg_err(
                *l,
                format!("unknown key `{k}` (sections: problem, solver, output, compare)"),
            ));
        }
    }
    let problem = parse_problem(&entries, &base)?;
    let mut solver = SolverConfig::default();
    for (k, line, v) in ordered(
        entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix("solver.").map(|s| (s, e))),
    ) {
        apply_solver_key(&mut solver, k, v, line)?;
    }
    if let Some(s) = seed_override {
        solver.seed = s;
    }
    let first_line = |prefix: &str| {
        entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, (l, _))| *l)
            .min()
            .unwrap_or(0)
    };
    solver
        .validate()
        .map_err(|e| cfg_err(first_line("solver."), e.to_string()))?;
    let out = |key: &str| entries.get(key).map(|(_, v)| base.join(v));
    let trace = out("output.trace");
    let summary = out("output.summary");
    let dir = out("output.dir");
    let merged = out("output.merged");
    let vector = out("output.vector");
    for (k, (l, _)) in entries.iter().filter(|(k, _)| k.starts_with("output.")) {
        if !matches!(
            k.as_str(),
            "output.trace" | "output.summary" | "output.dir" | "output.merged" | "output.vector"
        ) {
            return Err(cfg_err(*l, format!("unknown key `{k}`")));
        }
    }
    let compare_tol = match entries.get("compare.tol") {
        Some((l, v)) => parse_value(*l, "compare.tol", v)?,
        None => 1e-6,
    };
    let mut variants = Vec::new();
    if let Some((line, list)) = entries.get("compare.variants") {
        let names: Vec<String> = list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(cfg_err(*line, format!("duplicate variant `{name}`")));
            }
            if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(cfg_err(
                    *line,
                    format!("variant name `{name}` must be alphanumeric, `_` or `-`"),
                ));
            }
        }
        for name in &names {
            let prefix = format!("compare.{name}.");
            let mut cfg = solver.clone();
            for (k, l, v) in ordered(
                entries
                    .iter()
                    .filter_map(|(k, e)| k.strip_prefix(prefix.as_str()).map(|s| (s, e))),
            ) {
                if k == "seed" {
                    return Err(cfg_err(l, "variants share the solver seed; set `solver.seed` instead"));
                }
                apply_solver_key(&mut cfg, k, v, l)?;
            }
            cfg.validate()
                .map_err(|e| cfg_err(*line, format!("variant `{name}`: {e}")))?;
            variants.push(Variant {
                name: name.clone(),
                solver: cfg,
            });
        }
    }
    for (k, (l, _)) in entries.iter().filter(|(k, _)| k.starts_with("compare.")) {
        let ok = k == "compare.variants"
            || k == "compare.tol"
            || variants.iter().any(|v| k.starts_with(&format!("compare.{}.", v.name)));
        if !ok {
            return Err(cfg_err(*l, format!("`{k}` does not belong to a listed variant")));
        }
    }
    Ok(RunConfig {
        problem,
        solver,
        trace,
        summary,
        dir,
        merged,
        vector,
        variants,
        compare_tol,
    })
}

fn write_summary(path: &Path, res: &EigResult, cfg: &SolverConfig, op: &KronSumOperator, wall: f64) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "method = {}", cfg.method);
    let _ = writeln!(
        s,
        "n = {}\nm = {}\nrank = {}\nseed = {}",
        op.n(),
        op.m(),
        cfg.rank,
        cfg.seed
    );
    let _ = writeln!(s, "theta = {:.17e}", res.theta);
    let _ = writeln!(s, "residual = {:.17e}", res.residual_norm);
    let _ = writeln!(s, "converged = {}\nstagnated = {}", res.converged, res.stagnated);
    let _ = writeln!(s, "iterations = {}", res.iterations());
    let _ = writeln!(s, "precond_fallbacks = {}", res.precond_fallbacks);
    let _ = writeln!(s, "wall_time_s = {wall:.6}");
    fs::write(path, s)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}

fn report_config_error(path: &Path, e: &Error) -> i32 {
    eprintln!("error: {}: {e}", path.display());
    1
}

/// Run one solver. Exit code 0 on a finished run (converged, stagnated or
/// out of iterations), 1 on config errors, 2 on solver failure.
pub fn cmd_solve(config: &Path) -> i32 {
    let rc = match parse_config(config) {
        Ok(rc) => rc,
        Err(e) => return report_config_error(config, &e),
    };
    let op = match rc.problem.build() {
        Ok(op) => op,
        Err(e) => return report_config_error(config, &e),
    };
    let start = Instant::now();
    let res = match solve(&op, &rc.solver, None) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("solver failed: {e}");
            return 2;
        }
    };
    let wall = start.elapsed().as_secs_f64();
    let status = if res.converged {
        "converged"
    } else if res.stagnated {
        "stagnated"
    } else {
        "iteration limit"
    };
    println!(
        "{}: theta = {:.12e}, residual = {:.3e}, {status} after {} iterations, {wall:.2}s",
        rc.solver.method,
        res.theta,
        res.residual_norm,
        res.iterations()
    );
    let written = rc
        .trace
        .as_ref()
        .map_or(Ok(()), |p| ensure_parent(p).and_then(|_| res.trace.write_csv(p)))
        .and_then(|_| {
            rc.summary.as_ref().map_or(Ok(()), |p| {
                ensure_parent(p).and_then(|_| write_summary(p, &res, &rc.solver, &op, wall))
            })
        });
    if let Err(e) = written {
        eprintln!("error writing output: {e}");
        return 2;
    }
    0
}

/// One comparison row of the ranking table.
#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub name: String,
    pub result: std::result::Result<EigResult, String>,
}

/// Run all variants from the same start point.
pub fn run_comparison(op: &KronSumOperator, rc: &RunConfig) -> Result<Vec<VariantOutcome>> {
    let max_rank = rc
        .variants
        .iter()
        .map(|v| v.solver.rank)
        .max()
        .unwrap_or(rc.solver.rank);
    if rc.variants.iter().any(|v| v.solver.rank != max_rank) {
        return Err(Error::Precondition("comparison variants must share the rank".into()));
    }
    let start_cfg = SolverConfig {
        rank: max_rank,
        ..rc.solver.clone()
    };
    let x0 = initial_point(op, &start_cfg)?;
    Ok(rc
        .variants
        .iter()
        .map(|v| VariantOutcome {
            name: v.name.clone(),
            result: solve(op, &v.solver, Some(x0.clone())).map_err(|e| e.to_string()),
        })
        .collect())
}

/// Long-format `variant,iter,resid,time_s` rows of successful variants.
pub fn merged_csv(outcomes: &[VariantOutcome]) -> String {
    let mut s = String::from("variant,iter,resid,time_s\n");
    for o in outcomes {
        if let Ok(r) = &o.result {
            for row in &r.trace.rows {
                let _ = writeln!(s, "{},{},{:.16e},{:.16e}", o.name, row.iter, row.resid, row.time_s);
            }
        }
    }
    s
}

/// Run a comparison; exit 1 on config errors or fewer than two variants,
/// 2 if every variant fails.
pub fn cmd_compare(config: &Path) -> i32 {
    let rc = match parse_config(config) {
        Ok(rc) => rc,
        Err(e) => return report_config_error(config, &e),
    };
    if rc.variants.len() < 2 {
        eprintln!(
            "error: {}: `compare.variants` must list at least two variants, found {}",
            config.display(),
            rc.variants.len()
        );
        return 1;
    }
    let op = match rc.problem.build() {
        Ok(op) => op,
        Err(e) => return report_config_error(config, &e),
    };
    let outcomes = match run_comparison(&op, &rc) {
        Ok(o) => o,
        Err(e) => return report_config_error(config, &e),
    };
    let dir = rc
        .dir
        .clone()
        .unwrap_or_else(|| config.parent().map(Path::to_path_buf).unwrap_or_default());
    if let Err(e) = fs::create_dir_all(&dir) {
        eprintln!("error creating {}: {e}", dir.display());
        return 2;
    }
    for o in &outcomes {
        match &o.result {
            Ok(r) => {
                if let Err(e) = r.trace.write_csv(&dir.join(format!("{}.csv", o.name))) {
                    eprintln!("error writing trace of {}: {e}", o.name);
                    return 2;
                }
            }
            Err(e) => eprintln!("variant {} failed: {e}", o.name),
        }
    }
    let merged = rc.merged.clone().unwrap_or_else(|| dir.join("merged.csv"));
    if let Err(e) = ensure_parent(&merged).and_then(|_| Ok(fs::write(&merged, merged_csv(&outcomes))?)) {
        eprintln!("error writing {}: {e}", merged.display());
        return 2;
    }
    print!("{}", ranking_table(&outcomes, rc.compare_tol));
    if outcomes.iter().all(|o| o.result.is_err()) {
        return 2;
    }
    0
}

/// Variants ordered by iterations to `tol`, then by time to `tol`; variants
/// that never reach it come last, ordered by their smallest residual.
pub fn ranking_table(outcomes: &[VariantOutcome], tol: f64) -> String {
    type Row<'a> = (&'a str, Option<usize>, Option<f64>, f64, usize);
    let mut rows: Vec<Row> = outcomes
        .iter()
        .filter_map(|o| {
            o.result.as_ref().ok().map(|r| {
                (
                    o.name.as_str(),
                    r.trace.iters_to(tol),
                    r.trace.time_to(tol),
                    r.trace.min_resid(),
                    r.trace.len(),
                )
            })
        })
        .collect();
    rows.sort_by(|a, b| match (a.1, b.1) {
        (Some(x), Some(y)) => x.cmp(&y).then(a.2.unwrap_or(0.0).total_cmp(&b.2.unwrap_or(0.0))),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.3.total_cmp(&b.3),
    });
    let mut s = format!("ranking at residual {tol:.1e}\n");
    let _ = writeln!(
        s,
        "{:<4} {:<20} {:>10} {:>12} {:>12} {:>6}",
        "rank", "variant", "iters_to", "time_to_s", "min_resid", "rows"
    );
    for (i, (name, it, t, min, len)) in rows.iter().enumerate() {
        let it = it.map_or("-".to_string(), |v| v.to_string());
        let t = t.map_or("-".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            s,
            "{:<4} {:<20} {:>10} {:>12} {:>12.3e} {:>6}",
            i + 1,
            name,
            it,
            t,
            min,
            len
        );
    }
    for o in outcomes.iter().filter(|o| o.result.is_err()) {
        let _ = writeln!(s, "{:<4} {:<20} failed", "-", o.name);
    }
    s
}

/// Run the property suite.
pub fn cmd_check(level: Level, gauge_fault: Option<f64>) -> i32 {
    let start = Instant::now();
    let out = run_checks(&CheckOptions {
        level,
        gauge_fault,
        ..CheckOptions::default()
    });
    for o in &out {
        println!("{o}");
    }
    let failed = out.iter().filter(|o| !o.passed).count();
    println!(
        "{} of {} properties passed at level {level} in {:.1}s",
        out.len() - failed,
        out.len(),
        start.elapsed().as_secs_f64()
    );
    i32::from(failed > 0)
}

/// Compute the reference eigenpair; writes a summary (eigenvalues, residual
/// and the rank-`solver.rank` truncation level) and optionally the vector.
pub fn cmd_oracle(config: &Path) -> i32 {
    let rc = match parse_config(config) {
        Ok(rc) => rc,
        Err(e) => return report_config_error(config, &e),
    };
    let op = match rc.problem.build() {
        Ok(op) => op,
        Err(e) => return report_config_error(config, &e),
    };
    let start = Instant::now();
    let rf = match dense_reference(&op, rc.solver.target) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("reference eigensolve failed: {e}");
            return 2;
        }
    };
    let r = rc.solver.rank.min(op.n().min(op.m()));
    let (trunc_resid, trunc_err) = match truncation_residual(&op, rf.x.as_slice(), r) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("truncation failed: {e}");
            return 2;
        }
    };
    let mut s = String::new();
    let _ = writeln!(s, "n = {}\nm = {}\nterms = {}", op.n(), op.m(), op.num_terms());
    let _ = writeln!(s, "lambda = {:.17e}\nlambda2 = {:.17e}", rf.lambda, rf.lambda2);
    let _ = writeln!(s, "residual = {:.17e}", rf.residual);
    let _ = writeln!(s, "rank = {r}");
    let _ = writeln!(s, "truncation_error = {trunc_err:.17e}");
    let _ = writeln!(s, "truncation_residual = {trunc_resid:.17e}");
    let _ = writeln!(s, "wall_time_s = {:.6}", start.elapsed().as_secs_f64());
    print!("{s}");
    let written = rc
        .summary
        .as_ref()
        .map_or(Ok(()), |p| ensure_parent(p).and_then(|_| Ok(fs::write(p, &s)?)))
        .and_then(|_| {
            rc.vector.as_ref().map_or(Ok(()), |p| {
                ensure_parent(p).and_then(|_| write_vector(p, rf.x.as_slice()))
            })
        });
    if let Err(e) = written {
        eprintln!("error writing output: {e}");
        return 2;
    }
    0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig> {
        parse_config_str(text, Path::new("/tmp/x.cfg"), None)
    }

    #[test]
    fn full_config_parses() {
        let rc = parse(
            "# comment\nproblem.n = 40\nproblem.convection = false\nproblem.potential = exp_radial:5\n\
             solver.method = lrrqi\nsolver.rank = 3\nsolver.precond = expsum\nsolver.precond_k = 12\n\
             solver.target = closest:2.5\nsolver.early_shift = 0\noutput.trace = t.csv\n",
        )
        .unwrap();
        match &rc.problem {
            ProblemSource::ConvectionDiffusion(s) => {
                assert_eq!(s.n, 40);
                assert!(!s.convection);
                assert_eq!(s.potential, Potential::ExpRadial { scale: 5.0 });
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(rc.solver.method, Method::Lrrqi);
        assert_eq!(rc.solver.precond, PrecondChoice::ExpSum { k: 12 });
        assert_eq!(rc.solver.target, Target::ClosestTo(2.5));
        assert_eq!(rc.solver.early_shift, Some(0.0));
        assert_eq!(rc.trace.as_deref(), Some(Path::new("/tmp/t.csv")));
    }

    #[test]
    fn errors_carry_line_numbers() {
        for (text, line) in [
            ("problem.n = 10\nsolver.rank = two\n", 2),
            ("problem.n = 10\n\nsolver.bogus = 1\n", 3),
            ("garbage line\n", 1),
            ("problem.kind = laplacian\nproblem.svd_tol = 1e-3\n", 2),
            ("solver.precond_k = 3\n", 1),
            ("compare.variants = a\ncompare.b.method = lrjd\n", 2),
        ] {
            match parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn seed_override_reaches_variants() {
        let rc = parse_config_str(
            "solver.seed = 3\ncompare.variants = a, b\ncompare.b.method = lrrqi\n",
            Path::new("c.cfg"),
            Some(99),
        )
        .unwrap();
        assert_eq!(rc.solver.seed, 99);
        assert!(rc.variants.iter().all(|v| v.solver.seed == 99));
        assert_eq!(rc.variants[1].solver.method, Method::Lrrqi);
    }

    #[test]
    fn manifest_conflicts_with_pde_keys() {
        assert!(matches!(
            parse("problem.manifest = op.manifest\nproblem.n = 4\n"),
            Err(Error::Config { line: 2, .. })
        ));
    }
}
