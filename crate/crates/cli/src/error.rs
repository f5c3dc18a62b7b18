use affine_lift::Error;
use thiserror::Error as ThisError;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(e) => match e {
                Error::InvalidConfig(_)
                | Error::InvalidDimension(_)
                | Error::InvalidK { .. }
                | Error::NonDivisible { .. }
                | Error::InvalidSubdatabaseIndex { .. }
                | Error::MissingCodebook
                | Error::MissingLabels => EXIT_CONFIG,
                _ => EXIT_DATA,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::from(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(format!("csv: {e}"))
    }
}
