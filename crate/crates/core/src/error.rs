use std::path::PathBuf;

/// Errors produced by the library. `is_io` distinguishes environment
/// failures (exit code 2 in the CLI) from validation failures (exit code 1).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Format(String),

    #[error("trace contains no samples")]
    EmptyTrace,

    #[error("{rejected} of {total} lines malformed (>{limit_pct}%): {examples}")]
    TooManyMalformed {
        rejected: usize,
        total: usize,
        limit_pct: f64,
        /// "line N: reason" for the first offenders.
        examples: String,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("profile config: {0}")]
    Config(String),

    #[error("unknown facility profile '{0}'")]
    UnknownFacility(String),

    #[error("unknown hardware profile '{0}'")]
    UnknownHardware(String),

    #[error("run '{0}' has no energy figure and is not an external row")]
    MissingEnergy(String),

    #[error("ledger record {line}: {reason}")]
    Ledger { line: usize, reason: String },

    #[error("fit: {0}")]
    Fit(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the environment rather than the input's content.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
