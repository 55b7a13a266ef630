use std::path::PathBuf;

use thiserror::Error;

use crate::protocol::TrialRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inconsistent configuration. Maps to exit status 1.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("node index {index} out of range for a network of {n} nodes")]
    UnknownNode { index: usize, n: usize },

    /// The event source ran dry (or hit the horizon) before every node decoded.
    #[error("trial incomplete after {} meetings: {reason}", partial.meetings_consumed)]
    Incomplete {
        reason: String,
        partial: Box<TrialRecord>,
    },

    #[error("protocol invariant violated: {0}")]
    Invariant(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
