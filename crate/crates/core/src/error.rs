use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("cannot extract submodel: {0}")]
    Extraction(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("regression failed: {0}")]
    Regression(String),

    #[error(
        "narrowed search space is empty: no architecture is predicted below {constraint_ms:.3} ms \
         (fastest predicted {fastest_ms:.3} ms); raise the latency constraint"
    )]
    EmptyNarrowedSpace { constraint_ms: f64, fastest_ms: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact {}: {what}", path.display())]
    MissingArtifact { path: PathBuf, what: String },

    #[error("output directory is locked by another run ({})", .0.display())]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-parsable category used by the CLI exit line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::InvalidArchitecture(_) => "architecture",
            Error::Extraction(_) => "extraction",
            Error::Input(_) => "input",
            Error::Training(_) => "training",
            Error::Regression(_) => "regression",
            Error::EmptyNarrowedSpace { .. } => "empty-space",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::MissingArtifact { .. } => "missing-artifact",
            Error::Locked(_) => "locked",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
