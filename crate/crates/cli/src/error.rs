use logistic_harvest::Error;

/// Failure of a command, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Exit code 2: bad flags, config or output path.
    #[error("configuration error: {0:#}")]
    Config(anyhow::Error),
    /// Exit code 1: the numerics failed.
    #[error("computation failed: {0:#}")]
    Compute(anyhow::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// Library errors about inputs count as configuration errors.
    pub fn compute(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::Hypothesis(_) => CliError::Config(e.into()),
            other => CliError::Compute(other.into()),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) => 1,
        }
    }
}
