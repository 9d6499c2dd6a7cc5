use std::path::PathBuf;

/// Errors raised by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unknown block id `{0}` (expected one of v, u, vu for row and column)")]
    UnknownBlock(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("inconsistent dimensions: {0}")]
    InconsistentDimensions(String),

    #[error("rank degeneracy in retraction: sigma_r / sigma_1 = {ratio:e}")]
    RankDegeneracy { ratio: f64 },

    #[error("numerical failure at iteration {iter}: {msg}")]
    NumericalFailure { iter: usize, msg: String },

    #[error("preconditioner failure: {0}")]
    Preconditioner(String),

    #[error("indefinite Kronecker-sum symbol: lambda_min = {0:e}")]
    IndefiniteSymbol(f64),

    #[error("instance too large for the dense path: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { context, expected, got });
    }
    Ok(())
}
