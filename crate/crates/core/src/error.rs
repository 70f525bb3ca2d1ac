use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: rating {rating} outside [1, 5]")]
    InvalidRating { line: usize, rating: i64 },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unknown user id {0}")]
    UnknownUser(u32),

    #[error("unknown item id {0}")]
    UnknownItem(u32),

    #[error("item row {0} out of range")]
    ItemRowOutOfRange(usize),

    #[error("pmf training diverged at epoch {epoch} (loss is not finite); try a smaller learning_rate")]
    PmfDiverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what}: expected dimension {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("bad {kind} file: {message}")]
    Format { kind: &'static str, message: String },

    #[error("{kind} file version {found} is not supported (expected {expected})")]
    Version {
        kind: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("invalid candidate set: {0}")]
    InvalidCandidates(String),

    #[error("total diversity effect needs at least 2 candidates, got {0}")]
    TdeUndefined(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Training hit a non-finite value. Updates are only applied after their
    /// gradients pass a finiteness check, so `checkpoint` holds the networks
    /// as they were after the last good step.
    #[error("training aborted at episode {episode}, step {step}: {reason}")]
    TrainingAborted {
        episode: usize,
        step: usize,
        reason: String,
        checkpoint: Vec<u8>,
    },
}

impl Error {
    pub(crate) fn format(kind: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            kind,
            message: message.into(),
        }
    }
}
