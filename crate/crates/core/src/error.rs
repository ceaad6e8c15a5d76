use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {n_classes} classes (row {row})")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        n_classes: usize,
    },

    #[error("stale or mismatched forward cache: {0}")]
    StaleCache(String),

    #[error("within-class scatter is singular (smallest eigenvalue {smallest_eigenvalue:e})")]
    Conditioning { smallest_eigenvalue: f64 },

    #[error("checkpoint format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported checkpoint version {found} (supported up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("record at line {line} has schema version {found:?}, expected {expected}")]
    Schema {
        line: u64,
        found: Option<u64>,
        expected: u32,
    },

    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("class {class} has {have} samples, needs more than {need}")]
    ClassTooSmall {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },

    #[error("invalid plan: {}", .0.join("; "))]
    InvalidPlan(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
