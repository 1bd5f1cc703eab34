//! CLI error type and its mapping to exit codes.

use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed scenario: {0}")]
    Scenario(#[from] toml::de::Error),

    #[error(transparent)]
    Solver(#[from] ratchet_ruin::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Solver(e) if e.is_convergence() => EXIT_CONVERGENCE,
            _ => EXIT_VALIDATION,
        }
    }

    /// Short machine-readable class.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Solver(e) if e.is_convergence() => "convergence",
            CliError::Solver(_) => "validation",
            CliError::Validation(_) => "validation",
            CliError::Io { .. } => "io",
            CliError::Scenario(_) => "scenario",
        }
    }

    /// JSON error object written on failure.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
                "library_version": ratchet_ruin::VERSION,
            }
        })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
