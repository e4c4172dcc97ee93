use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {0:?}: dimensions must be positive and match the data length")]
    InvalidShape(Vec<usize>),

    #[error("non-finite value produced at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("sampler already finished all {0} steps")]
    SamplerFinished(usize),

    #[error("invalid guidance config: {0}")]
    Config(String),

    #[error("unknown preset `{name}` (valid presets: {valid})")]
    UnknownPreset { name: String, valid: String },

    #[error("unknown concept `{0}`")]
    UnknownConcept(String),

    #[error("invalid mixture model: {0}")]
    Model(String),

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },

    #[error("{path}: missing required column `{column}`")]
    MissingColumn { path: String, column: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad user input (as opposed to runtime failures).
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::NonFinite { .. })
    }
}
