use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched dimensions, lengths or counts between related inputs.
    #[error("structural mismatch: {0}")]
    Structural(String),

    /// Point configuration too degenerate for the requested fit.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Frame or element index outside the valid range.
    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    /// Simulation produced a non-finite state; the environment must reset.
    #[error("simulation diverged at substep {substep}")]
    SimulationDiverged { substep: usize },

    /// Invalid configuration value, named by field.
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    /// Checkpoint/observation layout hash does not match the active config.
    #[error("layout hash mismatch: checkpoint {found} vs expected {expected}")]
    LayoutMismatch { found: String, expected: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Format {
        path: String,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
