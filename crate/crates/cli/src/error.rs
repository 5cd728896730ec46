use std::process::ExitCode;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] featacq::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 1 usage, 2 data, 3 numerical divergence.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(featacq::Error::InvalidConfig(_)) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(_) => 2,
        };
        ExitCode::from(code)
    }
}
