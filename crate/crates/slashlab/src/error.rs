//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any slashlab operation.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A pulse frequency family would repeat inside the requested horizon.
    #[error("aliasing: pulse period 2m+1 = {period} must exceed 2N = {two_n} (m = {m}, N = {horizon})")]
    Aliasing {
        m: usize,
        horizon: usize,
        period: usize,
        two_n: usize,
    },

    /// All singular values of the analyzed matrix are zero.
    #[error("degenerate spectrum: matrix has no nonzero singular value")]
    DegenerateSpectrum,

    /// Mean projection is too close to zero for a relative-variation ratio.
    #[error("degenerate mean: |mean projection| = {0:.3e} is below 1e-12, relative variation undefined")]
    DegenerateMean(f64),

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    /// A tensor dump file is structurally malformed.
    #[error("dump format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A tensor dump file parses but its contents are inconsistent.
    #[error("corrupt dump, tensor '{tensor}': {message}")]
    Corrupt { tensor: String, message: String },

    /// A required tensor is absent from a dump.
    #[error("missing tensor: {0}")]
    MissingTensor(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
