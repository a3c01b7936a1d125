//! Crate-wide error type.

use std::path::PathBuf;

use crate::embedding::ToyEncoderParams;
use crate::train::PairScorerParams;

/// Last-good model state retained when training diverges.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Encoder(Box<ToyEncoderParams>),
    Scorer(Box<PairScorerParams>),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A data or config file failed to parse. Names the file, the 1-based
    /// line, and what was wrong.
    #[error("{}:{line}: {msg}", file.display())]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Validation(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("undefined similarity: zero vector")]
    ZeroVector,

    /// A loss or gradient stopped being finite mid-computation.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training hit a non-finite loss/gradient. The parameters from before
    /// the offending step are carried along so callers can persist them.
    #[error("training diverged at step {step}; last good checkpoint retained")]
    Diverged { step: usize, last_good: Checkpoint },

    /// A pipeline stage was invoked before the stage that produces its input.
    #[error("{} missing; produce with `{producer}`", artifact.display())]
    MissingArtifact {
        artifact: PathBuf,
        producer: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True when the error is the caller's fault (bad config, bad data,
    /// violated precondition) rather than a runtime failure. The CLI maps
    /// user errors to exit code 2 and everything else to 3.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::EmptyInput(_)
                | Error::DimensionMismatch { .. }
                | Error::ZeroVector
                | Error::MissingArtifact { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
