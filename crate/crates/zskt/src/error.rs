use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] zskt_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("checkpoint spec digest {stored} does not match {computed}")]
    DigestMismatch { stored: String, computed: String },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("{0}")]
    Csv(String),
    #[error("{0}")]
    Usage(String),
    #[error("plot: {0}")]
    Plot(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable kebab-case name printed by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Core(e) => e.class(),
            Error::Io { .. } => "io",
            Error::Config(_) => "invalid-config",
            Error::Version { .. } => "version-mismatch",
            Error::DigestMismatch { .. } => "spec-digest-mismatch",
            Error::Corrupt(_) => "corrupt-checkpoint",
            Error::Csv(_) => "csv",
            Error::Usage(_) => "usage",
            Error::Plot(_) => "plot",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
