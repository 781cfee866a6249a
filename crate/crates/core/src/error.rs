use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: missing column `{0}`")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: cannot read {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("degenerate column `{0}`: zero variance")]
    DegenerateColumn(String),

    #[error("degenerate target: y is constant")]
    DegenerateTarget,

    #[error("rank deficient design: numerical rank {rank} < {cols} columns")]
    Rank { rank: usize, cols: usize },

    #[error("matrix is not symmetric (|a_ij - a_ji| = {0:e})")]
    Symmetry(f64),

    #[error("matrix is not positive definite (p'Ap = {0:e} at iteration {1})")]
    Definiteness(f64, usize),

    #[error("batch size {0} too small for training-mode batch norm (need >= 2)")]
    BatchSize(usize),

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    /// True for usage, configuration, schema and input-file problems
    /// (CLI exit code 2); false for runtime and numeric failures (exit 1).
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Parse { .. }
                | Error::Config(_)
                | Error::Io { .. }
                | Error::EmptyInput(_)
                | Error::Serialize(_)
        )
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
