use thiserror::Error;

/// Error taxonomy shared by the library, the CLI, and the Python bindings.
/// Each variant maps to a distinct CLI exit code (see `cli::exit_code`).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to a library call (dimension mismatch, out-of-range value).
    #[error("argument: {0}")]
    Argument(String),
    /// Malformed tree or ensemble structure (empty child interval, index out of bounds).
    #[error("structure: {0}")]
    Structure(String),
    /// Numerical failure (non-finite value, failed factorization, root-find divergence).
    #[error("numeric: {0}")]
    Numeric(String),
    /// Operation not valid for the current state (empty draws, mode without interactions).
    #[error("state: {0}")]
    State(String),
    /// Invalid run configuration (bad field combination, unparseable config file).
    #[error("config: {0}")]
    Config(String),
    /// File system or serialization failure.
    #[error("io: {0}")]
    Io(String),
    /// Too many benchmark replicates failed to produce a score.
    #[error("benchmark: {0}")]
    Benchmark(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
