//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by the library. CLI exit codes map `Config` to 1,
/// `TrainAbort` to 2 and `Verdict` to 3; everything else exits 1.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An operation was applied to a state it does not accept.
    #[error("usage error: {0}")]
    Usage(String),

    /// Array shapes or names do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value in {context}: {detail}")]
    NonFinite { context: String, detail: String },

    /// Config file rejected (unknown key, bad value, missing section).
    #[error("config error: {0}")]
    Config(String),

    /// Training stopped early; losses or parameters went non-finite.
    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    TrainAbort {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    /// A built-in verdict (gradient check, game rate check) failed.
    #[error("verdict failed: {0}")]
    Verdict(String),

    /// An oracle evaluation inside finite differencing failed.
    #[error("oracle evaluation failed: {0}")]
    Oracle(String),

    /// An iterative solver hit its cap before reaching tolerance.
    #[error("solver did not converge: {0}")]
    NoConverge(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
