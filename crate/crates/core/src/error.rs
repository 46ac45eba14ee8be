use thiserror::Error;

/// Errors raised by the engine.
///
/// The CLI maps [`Error::Config`] to exit code 2 and the numeric classes to
/// exit code 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid or incomplete scenario description.
    #[error("config error: {0}")]
    Config(String),
    /// Scenario file problem tied to a specific line.
    #[error("{file}:{line}: {key}: {message}")]
    ConfigLine {
        file: String,
        line: usize,
        key: String,
        message: String,
    },
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// The model itself is ill-formed (e.g. a non-unimodal flow curve).
    #[error("model error: {0}")]
    Model(String),
    /// The current state makes an operation undefined.
    #[error("state error: {0}")]
    State(String),
    /// A run produced non-finite or negative values.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Two routes to the same quantity disagree beyond tolerance.
    #[error("internal consistency failure: {0}")]
    Consistency(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigLine { .. } | Error::Domain(_) | Error::Model(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
