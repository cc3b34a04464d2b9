use serde_json::json;

/// Failures surfaced to the shell; each maps to an exit code and a JSON
/// object on stderr.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Refusal(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] spo2dcac::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Refusal(_) => "refusal",
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Core(e) => e.kind(),
            CliError::Io(_) => "io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } })
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e.to_string()))
    }
}
