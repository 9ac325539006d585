use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {shapes}")]
    Shape { op: &'static str, shapes: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("poem {poem}, line {line}: {reason}")]
    MalformedPoem {
        poem: usize,
        line: usize,
        reason: String,
    },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("{0}")]
    Invalid(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("clue capacity exceeded: cursor {cursor} + {needed} > {capacity}")]
    ClueOverflow {
        cursor: usize,
        needed: usize,
        capacity: usize,
    },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("beam exhausted on line {line} (template {template})")]
    BeamExhausted { line: usize, template: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: &[&[usize]]) -> Self {
        let shapes = shapes
            .iter()
            .map(|s| format!("{s:?}"))
            .collect::<Vec<_>>()
            .join(" vs ");
        Error::Shape { op, shapes }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by bad user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::MalformedPoem { .. }
                | Error::EmptyCorpus
                | Error::Invalid(_)
                | Error::Config(_)
                | Error::Io { .. }
                | Error::Checkpoint(_)
        )
    }
}
