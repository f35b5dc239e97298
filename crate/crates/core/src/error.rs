use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of an operation (non-positive covariate, empty record set...).
    #[error("domain error: {0}")]
    Domain(String),

    /// The model or prior definition is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates an invariant.
    #[error("data error{}: {message}", .patient.as_ref().map(|p| format!(" for patient {p}")).unwrap_or_default())]
    Data { patient: Option<String>, message: String },

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    /// A JSON document does not match its schema; `path` is a JSON path such as `.structural.cl_max`.
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(patient: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Data {
            patient: Some(patient.into()),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
