use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("population cap exceeded: {count} particles (cap {cap})")]
    PopulationCap { count: usize, cap: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },

    #[error("worker panicked in replica {replica}: {message}")]
    WorkerPanic { replica: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        LabError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
