use std::path::PathBuf;

use thiserror::Error;

use crate::model::ParameterStore;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("point outside the Poincaré ball (norm² = {norm_sq}, limit = {limit})")]
    Domain { norm_sq: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{kind} index {index} out of range (size {size})")]
    Index {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("negative sampling failed: no valid corruption of ({head}, {relation}, {tail})")]
    Sampling {
        head: usize,
        relation: usize,
        tail: usize,
    },

    #[error("non-finite value in {family} at flat index {index}: {value}")]
    NonFinite {
        family: &'static str,
        index: usize,
        value: f64,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        epoch: usize,
        detail: String,
        snapshot: Snapshot,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by non-finite arithmetic rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Diverged { .. })
    }
}

/// Parameters captured when training aborts.
pub struct Snapshot(pub Box<ParameterStore>);

impl std::fmt::Debug for Snapshot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Snapshot({} entities, {} relations)",
            self.0.n_entities, self.0.n_relations
        )
    }
}
