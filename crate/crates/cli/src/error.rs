use std::fmt;
use std::path::Path;

use fuseformer::Error;

/// Process exit codes.
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGENCE: u8 = 3;
pub const EXIT_VERIFICATION: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, files or configuration.
    Input(String),
    Core(Error),
    /// A check the command exists to perform did not hold.
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Divergence { .. }) => EXIT_DIVERGENCE,
            CliError::Core(Error::Verification(_)) | CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Input(_) | CliError::Core(_) => EXIT_INPUT,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => f.write_str(m),
            CliError::Core(e @ Error::Divergence { .. }) => {
                write!(
                    f,
                    "{e}; lower the learning rate or check the inputs for extreme values"
                )
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<fuseformer::data::DataError> for CliError {
    fn from(e: fuseformer::data::DataError) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
