use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model graph: {0}")]
    InvalidGraph(String),

    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("tensor length mismatch: expected {expected} bytes, found {found}")]
    TensorLengthMismatch { expected: usize, found: usize },

    #[error("non-finite value in tensor `{tensor}`")]
    NonFinite { tensor: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid IDX file: {0}")]
    Idx(String),

    #[error("regression task requires a positive correctness tolerance")]
    MissingTolerance,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("operator inapplicable: {0}")]
    OperatorInapplicable(String),

    #[error("training diverged for seed {seed} (loss became non-finite)")]
    Divergence { seed: u64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("mismatched spectrum binning: {0}")]
    Binning(String),

    #[error("{0}")]
    Precondition(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
