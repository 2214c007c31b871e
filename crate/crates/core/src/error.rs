use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("value {value} at channel {channel}, index {index} is outside [0, 1]")]
    OutOfRange {
        channel: usize,
        index: usize,
        value: f64,
    },
    #[error("non-finite value at channel {channel}, index {index}")]
    NonFiniteValue { channel: usize, index: usize },
    #[error("channel {channel} has {len} samples, expected {expected}")]
    RaggedChannels {
        channel: usize,
        len: usize,
        expected: usize,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("thresholds must be positive and strictly increasing: {0:?}")]
    ThresholdOrder(Vec<f64>),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("channel {channel}, window {window} holds {count} spikes (at most one allowed)")]
    MultipleSpikesInWindow {
        channel: usize,
        window: usize,
        count: usize,
    },
    #[error("channel {channel}, step {step}: threshold trains fired with mixed signs")]
    InconsistentSpikes { channel: usize, step: usize },
    #[error("label index {label} out of range for {classes} classes")]
    Index { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unknown label `{label}`; vocabulary: {vocabulary:?}")]
    Label {
        label: String,
        vocabulary: Vec<String>,
    },
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported format version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 4,
            Error::Config(_) => 2,
            _ => 3,
        }
    }
}
