use gate_core::GateError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] GateError),
    #[error("cannot parse {path}: {message}")]
    ConfigSyntax { path: String, message: String },
    #[error("missing artifact {0}; run the earlier stage first")]
    MissingArtifact(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
