use std::path::PathBuf;

/// Errors raised anywhere in the core crate.
#[derive(Debug, thiserror::Error)]
pub enum UpoError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("loss node {node} is not scalar (length {len})")]
    NonScalarLoss { node: usize, len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token {token} out of range for vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("sequence of length {len} exceeds context window {limit}")]
    LengthOverflow { len: usize, limit: usize },
    #[error("degenerate: zero total certainty")]
    DegenerateCertainty,
    #[error("training diverged: {model} loss is non-finite at epoch {epoch}, step {step}")]
    Diverged {
        model: &'static str,
        epoch: usize,
        step: usize,
    },
    #[error("empty candidate pool: {0}")]
    EmptyPool(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("unsupported checkpoint version: found magic {found:?}, expected {expected:?}")]
    CheckpointVersion { found: String, expected: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown {kind} '{name}'; valid names: {valid}")]
    UnknownName {
        kind: &'static str,
        name: String,
        valid: String,
    },
    #[error("{}: {err}", path.display())]
    Io { path: PathBuf, err: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, UpoError>;

impl UpoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UpoError::Io {
            path: path.into(),
            err: source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        UpoError::InvalidArgument(msg.into())
    }
}
