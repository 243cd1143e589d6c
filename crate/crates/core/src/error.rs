//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
///
/// Variants are grouped roughly by origin: data ingestion and validation,
/// sampler setup and execution, and numerical routines. Callers that need
/// exit-code semantics can use [`Error::is_input_error`] to distinguish
/// bad inputs from runtime/numerical failures.
#[derive(Debug, Error)]
pub enum Error {
    /// Structural problems in input data (duplicate years, gaps, missing columns).
    #[error("ingest error: {0}")]
    Ingest(String),

    /// A cell could not be parsed; reports the offending row and column.
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// A computation is undefined for this input (e.g. zero variance).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Mismatched dimensions between paired inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The sampler's initial point is outside the support or has
    /// non-finite log density.
    #[error("invalid initial point: {0}")]
    Init(String),

    /// A proposal block rejected every move through burn-in while its
    /// scale underflowed; the chain cannot make progress.
    #[error("chain {chain} stuck in block '{block}': no accepted proposals through burn-in and proposal scale underflowed")]
    StuckChain { chain: usize, block: String },

    /// Numerical quadrature could not establish a valid bracket.
    #[error("quadrature failure: {0}")]
    Quadrature(String),

    /// Too few posterior draws for a tail-fitting procedure.
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),

    /// Invalid configuration (chain counts, thinning, block structure).
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the error is attributable to user input rather than a
    /// runtime or numerical failure.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Ingest(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::Degenerate(_)
                | Error::Shape(_)
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
