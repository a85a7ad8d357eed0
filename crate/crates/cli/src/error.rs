use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed, incompatible or unreadable input. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// A solver failed or did not converge. Exit code 3.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Numerical(_) => "numerical",
        }
    }

    /// Single diagnostic line: `error code=<n> kind=<kind> reason=<text>`.
    pub fn diagnostic(&self) -> String {
        let reason: String = self
            .to_string()
            .chars()
            .map(|c| if c.is_control() { ' ' } else { c })
            .collect();
        format!("error code={} kind={} reason={}", self.exit_code(), self.kind(), reason)
    }
}

impl From<tfcca::Error> for CliError {
    fn from(e: tfcca::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Input(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}
