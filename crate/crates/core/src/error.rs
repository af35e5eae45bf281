use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Dimension {
        axis: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("infeasible delay-bank design: {0}")]
    InfeasibleDesign(String),

    /// Intensity encoding cannot represent negative values.
    #[error("negative intensity {value} at input index {index:?}")]
    Encoding { value: f64, index: [usize; 3] },

    #[error("degenerate hardware: {0}")]
    DegenerateHardware(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("configuration cannot support a single output channel: scale {scale} < {taps} taps")]
    InfeasibleScale { scale: u64, taps: usize },

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("IDX parse error at byte offset {offset}: {reason}")]
    Parse { offset: usize, reason: String },

    #[error("dataset mismatch: {0}")]
    Dataset(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
