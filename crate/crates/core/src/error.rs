use std::path::PathBuf;

use crate::geom::Vec2;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite state at particle {id}: position ({}, {})", .position.x, .position.y)]
    NonFinite { id: usize, position: Vec2 },

    #[error("degenerate Voronoi cell for particle {id} (volume {volume:e})")]
    DegenerateCell { id: usize, volume: f64 },

    #[error("numeric failure at step {step}: {message}")]
    Numeric { step: usize, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 1,
            SimError::NonFinite { .. } | SimError::DegenerateCell { .. } | SimError::Numeric { .. } => 2,
            SimError::Io { .. } => 3,
        }
    }
}
