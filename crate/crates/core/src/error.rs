use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: parse error: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("question {question}: answer {answer:?} is not in the vocabulary")]
    OutOfVocabulary { question: usize, answer: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("spectrum is not conjugate-symmetric (max asymmetry {max_asymmetry:e})")]
    SpectrumIntegrity { max_asymmetry: f64 },

    #[error("deck {0:?} pools to a zero vector")]
    DegenerateDeck(String),

    #[error("record {participant_id:?} (topic {topic:?}) matches no deck")]
    UnassignedRecord { participant_id: String, topic: String },

    #[error("token id {id} out of range for question {question} (vocabulary size {size})")]
    Encoding {
        question: usize,
        id: usize,
        size: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: {message}")]
    TrainingFailure {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 for usage and configuration problems, 2 for
    /// runtime and numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Comparison(_) => 1,
            _ => 2,
        }
    }
}
