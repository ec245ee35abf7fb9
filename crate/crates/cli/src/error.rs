use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<stlod_core::Error> for CliError {
    fn from(e: stlod_core::Error) -> Self {
        use stlod_core::Error as E;
        match e {
            E::InvalidArgument(m) => CliError::Config(m),
            E::FingerprintMismatch(m) => {
                CliError::Config(format!("corrector cache fingerprint does not match the configuration: {m}"))
            }
            E::NumericalFailure(m) => CliError::Numerical(m),
            E::Format(m) => CliError::Io(format!("malformed file: {m}")),
            E::Io(e) => CliError::Io(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
