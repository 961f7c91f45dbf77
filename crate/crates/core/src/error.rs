use thiserror::Error;

/// Errors raised by the engine's value-level operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("duplicate method id `{0}`")]
    DuplicateMethod(String),

    #[error("unknown method id `{0}`")]
    UnknownMethod(String),

    #[error("step index {got} does not follow {last}")]
    OutOfOrderStep { last: u32, got: u32 },

    #[error("observation was not successful")]
    UnsuccessfulObservation,

    #[error("no usable source for an initial candidate")]
    NoCandidateSource,

    #[error("candidate is refined and can no longer be adjusted")]
    CandidateRefined,

    #[error("candidate has not passed validation")]
    NotValidated,

    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Wraps a path-tracking deserialization failure so the offending field is named.
    pub(crate) fn from_path_error(err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let path = err.path().to_string();
        let inner = err.into_inner();
        Error::schema(
            if path.is_empty() || path == "." {
                "<root>".to_string()
            } else {
                path
            },
            inner.to_string(),
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Deserializes JSON text while tracking the path of any failing field.
pub(crate) fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(Error::from_path_error)
}
