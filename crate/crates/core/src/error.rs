use std::path::PathBuf;

use thiserror::Error;

use crate::guidance::GuidanceError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate timestep t={t}: alpha_bar={alpha_bar:e} is at or below the {floor:e} floor")]
    DegenerateTimestep { t: usize, alpha_bar: f64, floor: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed PLY {path}{}: {message}", element.map(|i| format!(" (vertex {i})")).unwrap_or_default())]
    Ply {
        path: PathBuf,
        element: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Guidance(#[from] GuidanceError),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("checkpoint error: {message} (last good checkpoint: {})", last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Checkpoint {
        message: String,
        last_good: Option<PathBuf>,
    },

    #[error("training interrupted at iteration {iteration}")]
    Interrupted { iteration: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
