use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("measurement window of {window} samples exceeds channel length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("apparent power is zero; power factor undefined")]
    ZeroApparentPower,

    #[error("channel `{0}` not found in trace")]
    MissingChannel(String),

    #[error("non-finite value in `{channel}` at t = {time:.6} s")]
    NonFinite { channel: String, time: f64 },

    #[error("singular nodal matrix: floating subnetwork at nodes [{}]", .nodes.join(", "))]
    SingularNetwork { nodes: Vec<String> },

    #[error("unknown bus `{0}`")]
    UnknownBus(String),

    #[error("target retained fraction {target:.4} is below the reachable floor {floor:.4}")]
    UnreachableSag { target: f64, floor: f64 },

    #[error("loop-separation ordering violated: {0}")]
    LoopOrdering(String),

    #[error("reference table label mismatch: {0}")]
    LabelMismatch(String),

    #[error("scenario `{path}`: {message}")]
    Config { path: PathBuf, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
