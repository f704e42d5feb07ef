use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("label error: {0}")]
    Label(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unstable process: spectral radius {spectral_radius:.6} >= 1")]
    Unstable { spectral_radius: f64 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate embedding for node {node}: zero norm")]
    DegenerateEmbedding { node: usize },

    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),

    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("attention not normalized: {0}")]
    Normalization(String),

    #[error("ill-conditioned design matrix: {0} (already retried with ridge 1e-6)")]
    Conditioning(String),

    #[error("shape contract violated in {stage}: {message}")]
    Contract { stage: String, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("insufficient calibration data: {got} points, need at least {need}")]
    InsufficientCalibration { got: usize, need: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: non-finite loss or parameters")]
    Diverged {
        epoch: usize,
        /// Last finite state, for inspection.
        checkpoint: Box<crate::model::ModelCheckpoint>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn contract(stage: &str, message: impl Into<String>) -> Self {
        Error::Contract {
            stage: stage.to_string(),
            message: message.into(),
        }
    }
}
