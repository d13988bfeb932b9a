use thiserror::Error;

/// Errors surfaced by tensor ops, training, data generation, and the
/// experiment harness.
#[derive(Error, Debug)]
pub enum Error {
    /// Shape or dimension disagreement between operands.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input violates a documented precondition (counts, normalization, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Argument outside its mathematical domain (e.g. temperature <= 0).
    #[error("domain error: {0}")]
    Domain(String),

    /// API contract violation (wrong tape, non-scalar loss, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Lookup of an unknown task, parameter, or layer.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// A named pipeline or experiment stage failed.
    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
