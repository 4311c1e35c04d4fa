use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// A frame produced no segments where at least one was required.
    #[error("empty frame: no segments to aggregate")]
    EmptyFrame,

    /// The aggregated matrix was identically zero and cannot be normalized.
    #[error("degenerate descriptor: aggregated matrix is all-zero")]
    DegenerateDescriptor,

    /// Database insertions must be time-ordered.
    #[error("ordering error: timestamp {new} precedes last entry at {last}")]
    OutOfOrder { last: f64, new: f64 },

    /// Evaluation over a sequence without a single revisit is undefined.
    #[error("no revisits in sequence: recall is undefined, supply a looped trajectory")]
    NoRevisits,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
