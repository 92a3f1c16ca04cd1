use std::path::PathBuf;

/// Errors produced anywhere in the imaging and training pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent configuration, e.g. data that does not match an index table.
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor shapes do not line up for an operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid data contents, e.g. a class id outside the known set.
    #[error("data error: {0}")]
    Data(String),

    /// Random phantom generation could not satisfy its placement constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A value became NaN or infinite in checked mode.
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A file did not follow its documented layout.
    #[error("malformed file {path}: {reason} (at byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    /// A configuration file could not be parsed or validated.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
