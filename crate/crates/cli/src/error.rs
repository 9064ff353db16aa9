use std::path::PathBuf;

use recdistill_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const CORRUPT: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// A config field or command-line option is missing or invalid.
    #[error("{field}: {message}")]
    Field { field: String, message: String },

    #[error("cannot parse config {path}: {source}")]
    ConfigParse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("training diverged at step {step}; last good checkpoint written to {checkpoint}")]
    Diverged { step: usize, checkpoint: PathBuf },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Field { field: field.into(), message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Field { .. } | CliError::ConfigParse { .. } | CliError::Io { .. } => exit::CONFIG,
            CliError::Diverged { .. } => exit::DIVERGED,
            CliError::Invariant(_) => exit::FAILURE,
            CliError::Core(e) => match e {
                CoreError::Shape(_) | CoreError::Input(_) | CoreError::Config(_) | CoreError::Io(_) => exit::CONFIG,
                CoreError::Numeric(_) => exit::DIVERGED,
                CoreError::Corrupt(_) => exit::CORRUPT,
                CoreError::State(_) => exit::FAILURE,
            },
        }
    }
}
