use std::path::PathBuf;

use numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("series has {n_steps} steps, more than the maximum {max}; refusing to truncate")]
    Truncation { n_steps: usize, max: usize },
    #[error("template error: {0}")]
    Template(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error("knowledge base incomplete: extraction failed for {disease:?}: {source}")]
    PartialKnowledge {
        disease: String,
        #[source]
        source: TeacherError,
    },
    #[error("training error: {0}")]
    Training(String),
    #[error("frozen parameters changed during phase {phase}: {group} hash {before} -> {after}")]
    FrozenMutation {
        phase: u8,
        group: &'static str,
        before: String,
        after: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum TeacherError {
    #[error("teacher transport failure: {0}")]
    Transport(String),
    #[error("teacher response rejected: {0}")]
    Invalid(String),
    #[error("teacher gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("teacher configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Teacher(_) | Error::PartialKnowledge { .. } => 3,
            Error::Training(_)
            | Error::FrozenMutation { .. }
            | Error::Numerics(_)
            | Error::Checkpoint(_) => 4,
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
