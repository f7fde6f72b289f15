use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("infeasible constraint interval [{lower}, {upper}]")]
    Infeasible { lower: f64, upper: f64 },

    #[error("invariant breach: {0}")]
    Invariant(String),

    #[error("data error: {0}")]
    Data(#[from] DataError),

    #[error("draw file error: {0}")]
    DrawFile(#[from] DrawFileError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Problems found while ingesting a CSV dataset.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("response column needs at least two distinct values (found {0})")]
    DegenerateResponse(usize),

    #[error("monotone column `{0}` is constant and cannot be constrained")]
    ConstantConstrained(String),

    #[error("malformed monotone spec `{0}`")]
    BadMonotoneSpec(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty dataset")]
    Empty,
}

/// Problems found while reading a persisted draw file.
#[derive(Debug, Error)]
pub enum DrawFileError {
    #[error("unsupported draw file version `{0}`")]
    Version(String),

    #[error("draw file is truncated: {0}")]
    Truncated(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
