use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: not an ISO 10303-21 exchange file")]
    NotStep { file: String },

    #[error("truncated or malformed STEP escape at byte offset {offset}: {reason}")]
    StepEscape { offset: usize, reason: &'static str },

    #[error("{what}: line {line}: {reason}")]
    Parse { what: String, line: usize, reason: String },

    #[error("need at least {required} documents, found {found}")]
    TooFewDocuments { found: usize, required: usize },

    #[error("fastener standards table is empty")]
    EmptyStandards,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("corpus has {tokens} tokens, fewer than one window of {window}")]
    CorpusTooSmall { tokens: usize, window: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("no eligible pairs in the selected documents")]
    NoEligiblePairs,

    #[error("set encoder input set is empty")]
    EmptySet,

    #[error("no candidates to rank")]
    NoCandidates,

    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),

    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            reason: reason.into(),
        }
    }
}
