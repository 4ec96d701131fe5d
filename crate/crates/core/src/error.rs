use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The device description does not match the graph schema.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("unknown parameter key `{0}`")]
    UnknownKey(String),

    #[error("sharing group `{group}` has conflicting values: {detail}")]
    SharingConflict { group: String, detail: String },

    #[error("dimension {dim} exceeds the configured limit {limit}")]
    DimensionLimit { dim: usize, limit: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate spectrum: {0}")]
    Degenerate(String),

    #[error("dressed-state assignment failed: {0}")]
    Assignment(String),

    #[error("non-finite value encountered at step {step}")]
    NonFinite { step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Parameter(_)
                | Error::UnknownKey(_)
                | Error::SharingConflict { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}
