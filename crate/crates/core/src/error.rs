use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("zero-mass insertion of dish {0}")]
    ZeroMassInsertion(u32),

    #[error("remove from empty dish {0}")]
    RemoveFromEmptyDish(u32),

    #[error("n-gram ending in token {0} was never inserted")]
    MissingNgram(u32),

    #[error("inconsistent state sequence at position {0}")]
    InconsistentStateSequence(usize),

    #[error("beam exhausted at position {0}")]
    BeamExhausted(usize),

    #[error("zero probability for token {0}")]
    ZeroProbability(u32),

    #[error("model has no instantiated states")]
    UntrainedModel,

    #[error("index collision: original index {0} appears more than once")]
    IndexCollision(usize),

    #[error("sentence {0} has no genre label")]
    MissingGenre(usize),

    #[error("model file line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("vocabulary hash mismatch: model has {expected}, input has {found}")]
    VocabMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
