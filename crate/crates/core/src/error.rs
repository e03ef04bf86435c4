use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("unknown dtype tag {0:?}")]
    UnknownDtype(String),

    #[error("dtype mismatch: stored {stored}, requested {requested}")]
    DtypeMismatch {
        stored: &'static str,
        requested: &'static str,
    },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: String,
        expected: String,
        found: String,
    },

    #[error("invalid value {value} at {location}: {reason}")]
    InvalidValue {
        location: String,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("alignment block has zero total mass; OAS is undefined")]
    DegenerateMatrix,

    #[error("zero probability on the alignment path at row {row}, column {col}; loss is infinite")]
    ZeroProbability { row: usize, col: usize },

    #[error("length mismatch in {context}: expected {expected}, found {found}")]
    LengthMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("brute-force search over {paths} paths exceeds the limit of {limit}")]
    TooLarge { paths: u128, limit: u128 },

    #[error("text token {token} has zero duration and cannot be marked")]
    ZeroDuration { token: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable machine-readable identifier for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Manifest { .. } => "manifest",
            Error::UnknownDtype(_) => "unknown_dtype",
            Error::DtypeMismatch { .. } => "dtype_mismatch",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidValue { .. } => "invalid_value",
            Error::InvalidLayout(_) => "invalid_layout",
            Error::InvalidPath(_) => "invalid_path",
            Error::Empty(_) => "empty_input",
            Error::DegenerateMatrix => "degenerate_matrix",
            Error::ZeroProbability { .. } => "zero_probability",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::TooLarge { .. } => "too_large",
            Error::ZeroDuration { .. } => "zero_duration",
            Error::ZeroVariance(_) => "zero_variance",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Json { .. } => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
