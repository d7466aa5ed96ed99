use thiserror::Error;

/// Errors produced by corpus construction, model fitting and design.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("vocabulary empty under threshold {0}")]
    EmptyVocabulary(usize),

    #[error("all {0} documents were dropped: none contain an in-vocabulary token")]
    AllRowsDropped(usize),

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite objective at iteration {iteration}")]
    NonFiniteObjective { iteration: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("design information matrix still singular after {draws} draws")]
    SingularDesign { draws: usize },

    #[error("non-finite design gain for document {0}")]
    NonFiniteGain(usize),

    #[error("centered frequency matrix has rank {achievable}, fewer than the {requested} components requested")]
    RankDeficient { achievable: usize, requested: usize },

    #[error("no labeled documents")]
    NoLabeledRows,

    #[error("need at least two distinct sentiment levels, found {0}")]
    TooFewLevels(usize),

    #[error("label {0} is not on the sentiment scale")]
    OffScale(f64),

    #[error("vocabulary mismatch at column {index}: model has {expected:?}, corpus has {found:?}")]
    VocabularyMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
