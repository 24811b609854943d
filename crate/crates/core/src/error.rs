use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error at row {row}: {message}")]
    Format { row: String, message: String },

    #[error("unknown {kind} {name:?}")]
    Lookup { kind: &'static str, name: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient categories: {found} code(s) reach min_count {min_count}, need at least 2")]
    InsufficientCategories { found: usize, min_count: usize },

    #[error("category {0:?} has no sentences")]
    EmptyCategory(String),

    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },

    #[error("cosine distance undefined for a zero vector")]
    UndefinedDistance,

    #[error("argument error: {0}")]
    Argument(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("loss became non-finite at epoch {epoch} (lr {lr}); retry with a smaller learning rate")]
    Divergence { epoch: usize, lr: f64 },

    #[error("matrix {tag:?} has undefined entries")]
    UndefinedMatrix { tag: String },

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn lookup(kind: &'static str, name: impl Into<String>) -> Self {
        Error::Lookup {
            kind,
            name: name.into(),
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Format { .. } => "format",
            Error::Lookup { .. } => "lookup",
            Error::InsufficientData(_) => "insufficient_data",
            Error::InsufficientCategories { .. } => "insufficient_categories",
            Error::EmptyCategory(_) => "empty_category",
            Error::MissingEmbedding(_) => "missing_embedding",
            Error::Dimension { .. } => "dimension",
            Error::UndefinedDistance => "undefined_distance",
            Error::Argument(_) => "argument",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::Training(_) => "training",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedMatrix { .. } => "undefined_matrix",
            Error::UndefinedScore(_) => "undefined_score",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Serde(_) => "serialization",
        }
    }
}
