use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variant names double as the typed error names printed by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    // graph ingestion and queries
    #[error("unknown entity reference `{0}`")]
    UnknownEntityRef(String),
    #[error("unknown enumeration value `{0}`")]
    BadKind(String),
    #[error("duplicate entity id `{0}`")]
    DuplicateEntityId(String),

    // synthesis
    #[error("no seed admits a connected subgraph of {size} nodes")]
    InsufficientGraph { size: usize },
    #[error("no path realizes the template after {retries} retries")]
    NoPathFound { retries: usize },
    #[error("only {available} distractors available, {requested} requested")]
    NotEnoughDistractors { requested: usize, available: usize },
    #[error("masked entity text `{0}` leaks into the stem")]
    LeakageDetected(String),
    #[error("duplicate option text `{0}`")]
    DuplicateOptionText(String),

    // corpus
    #[error("validator unavailable: {0}")]
    ValidatorUnavailable(String),
    #[error("difficulty classifier unavailable: {0}")]
    ClassifierUnavailable(String),
    #[error("pool exhausted: {pool} pool has {available} items, {requested} requested")]
    PoolExhausted {
        pool: &'static str,
        requested: usize,
        available: usize,
    },

    // grpo
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("group {0} has unscored candidates")]
    UnscoredGroup(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error("gradient contains non-finite entries")]
    NonFiniteGradient,

    // curriculum
    #[error("tier {0} has nonzero weight but no items")]
    EmptyTier(String),
    #[error("hard pool is empty")]
    EmptyHardPool,

    // distill
    #[error("teacher unavailable: {0}")]
    TeacherUnavailable(String),

    // evaluation
    #[error("benchmark `{name}` expected {expected} items, found {found}")]
    SizeMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("{source_name}:{line}: {message}")]
    CorpusParse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("model adapter unavailable: {0}")]
    AdapterUnavailable(String),

    // configuration and plumbing
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable typed name, printed on stderr by the CLI.
    pub fn name(&self) -> &'static str {
        match self {
            Error::UnknownEntityRef(_) => "UnknownEntityRef",
            Error::BadKind(_) => "BadKind",
            Error::DuplicateEntityId(_) => "DuplicateEntityId",
            Error::InsufficientGraph { .. } => "InsufficientGraph",
            Error::NoPathFound { .. } => "NoPathFound",
            Error::NotEnoughDistractors { .. } => "NotEnoughDistractors",
            Error::LeakageDetected(_) => "LeakageDetected",
            Error::DuplicateOptionText(_) => "DuplicateOptionText",
            Error::ValidatorUnavailable(_) => "ValidatorUnavailable",
            Error::ClassifierUnavailable(_) => "ClassifierUnavailable",
            Error::PoolExhausted { .. } => "PoolExhausted",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::UnscoredGroup(_) => "UnscoredGroup",
            Error::EmptyBatch => "EmptyBatch",
            Error::NonFiniteGradient => "NonFiniteGradient",
            Error::EmptyTier(_) => "EmptyTier",
            Error::EmptyHardPool => "EmptyHardPool",
            Error::TeacherUnavailable(_) => "TeacherUnavailable",
            Error::SizeMismatch { .. } => "SizeMismatch",
            Error::CorpusParse { .. } => "CorpusParseError",
            Error::AdapterUnavailable(_) => "AdapterUnavailable",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::Precondition(_) => "PreconditionViolated",
            Error::FileNotFound(_) => "FileNotFound",
            Error::BadCheckpoint(_) => "BadCheckpoint",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code: 2 config error, 3 data error, 4 external service.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_) => 2,
            Error::ValidatorUnavailable(_)
            | Error::ClassifierUnavailable(_)
            | Error::TeacherUnavailable(_)
            | Error::AdapterUnavailable(_) => 4,
            _ => 3,
        }
    }
}
