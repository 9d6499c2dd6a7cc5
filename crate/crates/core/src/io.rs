//! Matrix Market factors and operator manifests.
//!
//! A manifest is flat `key = value` text:
//!
//! ```text
//! n = 3
//! m = 3
//! R = 1
//! term.0.F = f0.mtx
//! term.0.G = g0.mtx
//! ```
//!
//! Relative factor paths resolve against the manifest's directory. An
//! optional `symmetric = true|false` overrides the symmetry detection.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::operator::{KronSumOperator, KronTerm, SparseFactor};

const HEADER: &str = "%%MatrixMarket matrix coordinate real general";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Read a real coordinate-format Matrix Market file (`general` or `symmetric`).
pub fn read_matrix_market(path: &Path) -> Result<SparseFactor> {
    let text = read_text(path)?;
    let mut lines = text.lines().enumerate();
    let (_, banner) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let words: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" || words[1] != "matrix" || words[2] != "coordinate" {
        return Err(parse_err(
            path,
            1,
            "expected `%%MatrixMarket matrix coordinate <field> <symmetry>`",
        ));
    }
    if words[3] != "real" && words[3] != "integer" {
        return Err(parse_err(path, 1, format!("unsupported field `{}`", words[3])));
    }
    let symmetric = match words[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry `{other}`"))),
    };
    let mut size: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                let nums: Vec<usize> = fields
                    .iter()
                    .map(|f| f.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| parse_err(path, lineno, "size line must hold three integers"))?;
                if nums.len() != 3 {
                    return Err(parse_err(path, lineno, "size line must hold three integers"));
                }
                size = Some((nums[0], nums[1], nums[2]));
                triplets.reserve(nums[2]);
            }
            Some((rows, cols, _)) => {
                if fields.len() != 3 {
                    return Err(parse_err(path, lineno, "entry line must be `row col value`"));
                }
                let index = |s: &str, bound: usize| -> Result<usize> {
                    let v: usize = s
                        .parse()
                        .map_err(|_| parse_err(path, lineno, format!("bad index `{s}`")))?;
                    if v == 0 || v > bound {
                        return Err(parse_err(path, lineno, format!("index {v} outside 1..={bound}")));
                    }
                    Ok(v - 1)
                };
                let i = index(fields[0], rows)?;
                let j = index(fields[1], cols)?;
                let v: f64 = fields[2]
                    .parse()
                    .map_err(|_| parse_err(path, lineno, format!("bad value `{}`", fields[2])))?;
                triplets.push((i, j, v));
                if symmetric && i != j {
                    triplets.push((j, i, v));
                }
            }
        }
    }
    let (rows, cols, nnz) = size.ok_or_else(|| parse_err(path, text.lines().count(), "missing size line"))?;
    let stored = if symmetric {
        triplets.iter().filter(|(i, j, _)| i >= j).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(parse_err(
            path,
            text.lines().count(),
            format!("size line announces {nnz} entries, found {stored}"),
        ));
    }
    SparseFactor::from_triplets(rows, cols, &triplets)
}

/// Write a factor in `general` coordinate format with round-trip precision.
pub fn write_matrix_market(path: &Path, a: &SparseFactor) -> Result<()> {
    let mut out = String::with_capacity(32 * (a.nnz() + 2));
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(out, "{} {} {}", a.nrows(), a.ncols(), a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(out, "{} {} {:e}", i + 1, j + 1, v);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parse flat `key = value` text; `#` starts a comment. Returns each value
/// with its 1-based line number.
pub fn parse_key_values(path: &Path, text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, lineno, format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(parse_err(path, lineno, "empty key"));
        }
        if map.insert(k.to_string(), (lineno, v.to_string())).is_some() {
            return Err(parse_err(path, lineno, format!("duplicate key `{k}`")));
        }
    }
    Ok(map)
}

/// Load an operator from a manifest.
pub fn load_operator(manifest: &Path) -> Result<KronSumOperator> {
    let text = read_text(manifest)?;
    let map = parse_key_values(manifest, &text)?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let get = |key: &str| -> Result<&(usize, String)> {
        map.get(key)
            .ok_or_else(|| parse_err(manifest, 0, format!("missing key `{key}`")))
    };
    let int = |key: &str| -> Result<usize> {
        let (line, v) = get(key)?;
        v.parse()
            .map_err(|_| parse_err(manifest, *line, format!("`{key}` must be a nonnegative integer")))
    };
    let (n, m, count) = (int("n")?, int("m")?, int("R")?);
    for (key, (line, _)) in &map {
        let known = matches!(key.as_str(), "n" | "m" | "R" | "symmetric")
            || key
                .strip_prefix("term.")
                .and_then(|rest| rest.split_once('.'))
                .is_some_and(|(k, side)| k.parse::<usize>().is_ok_and(|k| k < count) && (side == "F" || side == "G"));
        if !known {
            return Err(parse_err(manifest, *line, format!("unexpected key `{key}`")));
        }
    }
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut terms = Vec::with_capacity(count);
    for k in 0..count {
        let f = read_matrix_market(&resolve(&get(&format!("term.{k}.F"))?.1))?;
        let g = read_matrix_market(&resolve(&get(&format!("term.{k}.G"))?.1))?;
        if f.nrows() != m || f.ncols() != m {
            return Err(Error::InconsistentDimensions(format!(
                "term {k}: F is {}×{}, manifest says m = {m}",
                f.nrows(),
                f.ncols()
            )));
        }
        if g.nrows() != n || g.ncols() != n {
            return Err(Error::InconsistentDimensions(format!(
                "term {k}: G is {}×{}, manifest says n = {n}",
                g.nrows(),
                g.ncols()
            )));
        }
        terms.push(KronTerm { f, g });
    }
    let symmetric = match map.get("symmetric") {
        Some((line, v)) => v
            .parse::<bool>()
            .map_err(|_| parse_err(manifest, *line, "`symmetric` must be true or false"))?,
        None => terms.iter().all(|t| t.f == t.f.transpose() && t.g == t.g.transpose()),
    };
    KronSumOperator::new(terms, symmetric)
}

/// Write `<stem>.manifest` plus one Matrix Market file per factor into `dir`.
/// Returns the manifest path.
pub fn write_operator(dir: &Path, stem: &str, op: &KronSumOperator) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "n = {}\nm = {}\nR = {}", op.n(), op.m(), op.num_terms());
    let _ = writeln!(manifest, "symmetric = {}", op.symmetric_hint());
    for (k, t) in op.terms().iter().enumerate() {
        for (side, a) in [("F", &t.f), ("G", &t.g)] {
            let name = format!("{stem}_{k}_{side}.mtx");
            write_matrix_market(&dir.join(&name), a)?;
            let _ = writeln!(manifest, "term.{k}.{side} = {name}");
        }
    }
    let path = dir.join(format!("{stem}.manifest"));
    fs::write(&path, manifest)?;
    Ok(path)
}

/// One value per line with round-trip precision.
pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    let mut out = String::with_capacity(25 * v.len());
    for x in v {
        let _ = writeln!(out, "{x:e}");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("bad value `{}`", l.trim())))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tmp() -> PathBuf {
        use std::sync::atomic::{AtomicUsize, Ordering};
        static NEXT: AtomicUsize = AtomicUsize::new(0);
        let dir = std::env::temp_dir().join(format!(
            "lrjd-io-{}-{}",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn identity_pair_loads_as_identity() {
        let dir = tmp();
        write_matrix_market(&dir.join("i.mtx"), &SparseFactor::identity(3)).unwrap();
        fs::write(
            dir.join("op.manifest"),
            "n = 3\nm = 3\nR = 1\nterm.0.F = i.mtx\nterm.0.G = i.mtx\n",
        )
        .unwrap();
        let op = load_operator(&dir.join("op.manifest")).unwrap();
        assert!(op.symmetric_hint());
        let x: Vec<f64> = (0..9).map(|i| i as f64 - 2.5).collect();
        assert_eq!(op.matvec(&x).unwrap(), x);
    }

    #[test]
    fn mismatched_factor_is_rejected() {
        let dir = tmp();
        write_matrix_market(&dir.join("i3.mtx"), &SparseFactor::identity(3)).unwrap();
        write_matrix_market(&dir.join("i4.mtx"), &SparseFactor::identity(4)).unwrap();
        fs::write(
            dir.join("op.manifest"),
            "n = 3\nm = 3\nR = 1\nterm.0.F = i4.mtx\nterm.0.G = i3.mtx\n",
        )
        .unwrap();
        let err = load_operator(&dir.join("op.manifest")).unwrap_err();
        assert!(matches!(err, Error::InconsistentDimensions(_)), "{err}");
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tmp();
        assert!(matches!(
            load_operator(&dir.join("absent.manifest")),
            Err(Error::MissingFile(_))
        ));
        fs::write(dir.join("bad.mtx"), format!("{HEADER}\n2 2 1\n1 x 1.0\n")).unwrap();
        match read_matrix_market(&dir.join("bad.mtx")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        fs::write(dir.join("op.manifest"), "n = 2\nm 2\n").unwrap();
        match load_operator(&dir.join("op.manifest")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symmetric_storage_is_expanded() {
        let dir = tmp();
        let p = dir.join("s.mtx");
        fs::write(
            &p,
            "%%MatrixMarket matrix coordinate real symmetric\n% c\n2 2 2\n1 1 4\n2 1 -1\n",
        )
        .unwrap();
        let a = read_matrix_market(&p).unwrap();
        assert_eq!(a.to_dense(), DMatrix::from_row_slice(2, 2, &[4.0, -1.0, -1.0, 0.0]));
    }

    #[test]
    fn round_trip_preserves_matvec() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut rand_sparse = |k: usize| {
            let t: Vec<(usize, usize, f64)> = (0..3 * k)
                .map(|_| {
                    (
                        rng.random_range(0..k),
                        rng.random_range(0..k),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect();
            SparseFactor::from_triplets(k, k, &t).unwrap()
        };
        let op = KronSumOperator::new(
            vec![
                KronTerm {
                    f: rand_sparse(5),
                    g: rand_sparse(4),
                },
                KronTerm {
                    f: rand_sparse(5),
                    g: rand_sparse(4),
                },
            ],
            false,
        )
        .unwrap();
        let dir = tmp();
        let back = load_operator(&write_operator(&dir, "rand", &op).unwrap()).unwrap();
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let (a, b) = (op.matvec(&x).unwrap(), back.matvec(&x).unwrap());
        let err = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-14, "{err}");
        assert!(!back.symmetric_hint());
    }

    #[test]
    fn vector_round_trip_is_exact() {
        let dir = tmp();
        let v = vec![1.0 / 3.0, -2e-300, 7.5e12];
        write_vector(&dir.join("v.txt"), &v).unwrap();
        assert_eq!(read_vector(&dir.join("v.txt")).unwrap(), v);
    }
}
