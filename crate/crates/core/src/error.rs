use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid {family} kernel hyperparameters: {reason}")]
    Hyperparameter { family: &'static str, reason: String },

    /// Cholesky factorization hit a non-positive (or roundoff-level) pivot.
    #[error("Gram matrix is not positive definite: pivot {pivot} is {value:e}")]
    SingularGram { pivot: usize, value: f64 },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("degenerate batch after {attempts} attempts: target quadratic form vanished")]
    DegenerateBatch { attempts: usize },

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFinite { iteration: usize, detail: String },

    #[error("dictionary has {m} kernels, above the exhaustive search cap of {cap}; use sparse selection instead")]
    TooManyKernels { m: usize, cap: usize },

    #[error("support set is empty")]
    EmptySupport,

    #[error("every lambda in the sweep pruned all kernels")]
    AllPruned,

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Reads a whole file, naming it in the error.
pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a whole file, naming it in the error.
pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

impl Error {
    /// Stable, machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Dimension { .. } => "dimension",
            Error::Hyperparameter { .. } => "hyperparameter",
            Error::SingularGram { .. } => "singular_gram",
            Error::Conditioning(_) => "conditioning",
            Error::DegenerateBatch { .. } => "degenerate_batch",
            Error::NonFinite { .. } => "non_finite",
            Error::TooManyKernels { .. } => "too_many_kernels",
            Error::EmptySupport => "empty_support",
            Error::AllPruned => "all_pruned",
            Error::Parse { .. } => "parse",
            Error::Io(_) | Error::File { .. } => "io",
            Error::Json(_) => "json",
            Error::TomlDe(_) | Error::TomlSer(_) => "toml",
            Error::Csv(_) => "csv",
        }
    }
}
