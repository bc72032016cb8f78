use std::process::ExitCode;

use stegnet_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("gradient check failed for: {}", .0.join(", "))]
    Gradcheck(Vec<&'static str>),
    #[error("{0} of {1} images could not be processed")]
    Embed(usize, usize),
}

impl CliError {
    /// 1 usage, 2 data or format, 3 numeric failure.
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) | CoreError::InvalidStage(_) | CoreError::InvalidPayload(_) => 1,
                CoreError::Divergence { .. } => 3,
                _ => 2,
            },
            CliError::Gradcheck(_) => 3,
            CliError::Embed(..) => 2,
        })
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CoreError::Io(e))
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;
