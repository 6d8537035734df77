use std::io;
use std::path::Path;

use serde::Serialize;

/// Errors reported by the command-line front end. Each maps to one exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Core(#[from] ecg_ssl::Error),
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    code: i32,
    message: String,
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        use ecg_ssl::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => "usage",
            CliError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => "usage",
            CliError::Io { .. } => "data",
            CliError::Core(E::Divergence { .. }) => "divergence",
            CliError::Core(E::InvalidParameter(_)) => "usage",
            CliError::Core(_) => "data",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "usage" => 2,
            "divergence" => 4,
            _ => 3,
        }
    }

    /// One JSON object on one line.
    pub fn to_line(&self) -> String {
        let line = ErrorLine { error: self.kind(), code: self.exit_code(), message: self.to_string().replace('\n', " ") };
        serde_json::to_string(&line).expect("plain struct serializes")
    }
}
