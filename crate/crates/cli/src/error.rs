use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("computation failed: {0}")]
    Computation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Computation(_) | CliError::Io(_) => 2,
        }
    }

    pub(crate) fn compute(context: &str) -> impl FnOnce(snls_core::Error) -> CliError + '_ {
        move |e| match e {
            snls_core::Error::ConstantBelowMeasured { .. } => CliError::Config(format!("{context}: {e}")),
            _ => CliError::Computation(format!("{context}: {e}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
