use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("invalid label {0}, expected 0 (cover) or 1 (stego)")]
    InvalidLabel(usize),
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid input at stage `{stage}`: {msg}")]
    InvalidInput { stage: String, msg: String },
    #[error("unknown stage `{0}`; valid stages: preprocessing, sep1, sep2, block1, block2, block3, block4")]
    InvalidStage(String),
    #[error("invalid payload {0}, expected a value in (0, 1]")]
    InvalidPayload(f64),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn input(stage: &str, msg: impl Into<String>) -> Self {
        Error::InvalidInput { stage: stage.to_string(), msg: msg.into() }
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format { offset, msg: msg.into() }
    }
}
