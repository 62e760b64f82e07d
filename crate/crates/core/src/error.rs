use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("label count mismatch: {sentences} sentence blocks but {labels} labels")]
    LabelCountMismatch { sentences: usize, labels: usize },

    #[error("sentence {source_id}: missing label")]
    MissingLabel { source_id: String },

    #[error("unknown label {label:?}")]
    UnknownLabel { label: String },

    #[error("sentence {source_id}: {problem}")]
    InvalidTree {
        source_id: String,
        problem: TreeProblem,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("embedding file {path}: {message}")]
    Embeddings { path: PathBuf, message: String },

    #[error("template syntax: {0}")]
    Template(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Structural defect found by [`crate::ingest::validate_tree`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TreeProblem {
    Empty,
    /// Token `index` has a head outside `0..=len`.
    HeadOutOfRange {
        index: usize,
        head: usize,
    },
    SelfLoop {
        index: usize,
    },
    /// Token indices forming a cycle, in head-following order.
    Cycle {
        members: Vec<usize>,
    },
    NoRoot,
    MultipleRoots {
        roots: Vec<usize>,
    },
    EmptyForm {
        index: usize,
    },
}

impl std::fmt::Display for TreeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TreeProblem::Empty => write!(f, "sentence has no tokens"),
            TreeProblem::HeadOutOfRange { index, head } => {
                write!(f, "token {index} has out-of-range head {head}")
            }
            TreeProblem::SelfLoop { index } => write!(f, "token {index} is its own head"),
            TreeProblem::Cycle { members } => {
                let m: Vec<String> = members.iter().map(|m| m.to_string()).collect();
                write!(f, "head cycle through tokens {}", m.join(" -> "))
            }
            TreeProblem::NoRoot => write!(f, "no token attaches to ROOT"),
            TreeProblem::MultipleRoots { roots } => {
                write!(f, "multiple roots {roots:?} rejected in strict mode")
            }
            TreeProblem::EmptyForm { index } => write!(f, "token {index} has an empty form"),
        }
    }
}
