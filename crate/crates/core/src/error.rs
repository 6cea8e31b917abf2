use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate document id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {label:?} has {count} documents, at least {required} required")]
    InsufficientClass {
        label: String,
        count: usize,
        required: usize,
    },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("vocabulary fingerprint mismatch: model {model}, input {input}")]
    FingerprintMismatch { model: String, input: String },

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence { iterations: usize, grad_norm: f64 },

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("trial {trial} (seed {seed}): {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable snake-case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::DuplicateId { .. } => "duplicate_id",
            Error::EmptyCorpus => "empty_corpus",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InsufficientClass { .. } => "insufficient_class",
            Error::UnknownLabel(_) => "unknown_label",
            Error::Degenerate(_) => "degenerate",
            Error::Singular(_) => "singular",
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::FingerprintMismatch { .. } => "fingerprint_mismatch",
            Error::NoConvergence { .. } => "no_convergence",
            Error::ModelFile(_) => "model_file",
            Error::Trial { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
