use ota4_core::OtaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Parse { path: String, source: OtaError },
    #[error(transparent)]
    Analysis(#[from] OtaError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Parse { .. } => 3,
            CliError::Analysis(OtaError::Parse(_)) => 3,
            CliError::Analysis(_) | CliError::Io { .. } => 1,
        }
    }
}
