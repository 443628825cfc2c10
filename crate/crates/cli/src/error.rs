use std::fmt;

/// A failure mapped onto the process exit code: 1 for bad data, 2 for bad
/// configuration or usage.
#[derive(Debug)]
pub enum CliError {
    Data(anyhow::Error),
    Config(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(e) => write!(f, "data error: {e}"),
            CliError::Config(e) => write!(f, "config error: {e}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error as a data or config failure.
pub trait Classify<T> {
    fn data(self) -> CliResult<T>;
    fn config(self) -> CliResult<T>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn data(self) -> CliResult<T> {
        self.map_err(|e| CliError::Data(e.into()))
    }

    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.into()))
    }
}

pub fn data_error(msg: impl fmt::Display) -> CliError {
    CliError::Data(anyhow::anyhow!("{msg}"))
}

pub fn config_error(msg: impl fmt::Display) -> CliError {
    CliError::Config(anyhow::anyhow!("{msg}"))
}
