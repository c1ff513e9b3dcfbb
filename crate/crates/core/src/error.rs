use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid filter spec: {0}")]
    InvalidFilterSpec(String),
    #[error("window too short: {0}")]
    WindowTooShort(String),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("channel grouping: {0}")]
    ChannelGrouping(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("insufficient subjects: {0}")]
    InsufficientSubjects(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("unknown variant: {0}")]
    UnknownVariant(String),
    #[error("invalid tensor container: {0}")]
    InvalidContainer(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
