use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// A check or acceptance gate did not hold.
    #[error("{0}")]
    Failure(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Sim(#[from] ipcnn::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ipcnn::Error as E;
        match self {
            CliError::Failure(_) => 1,
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Sim(e) => match e {
                E::Io(_) | E::Parse { .. } | E::Dataset(_) | E::Checkpoint(_) => 3,
                E::InvalidParameter { .. } | E::InvalidSpec(_) | E::UnknownArchitecture(_) => 2,
                _ => 1,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
