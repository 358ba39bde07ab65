use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rnc_core::Error),

    #[error("{failed} of {total} runs failed")]
    RunsFailed { failed: usize, total: usize },

    #[error("gradient check failed for: {0}")]
    GradCheckFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const RUNTIME: i32 = 2;
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Usage and configuration problems exit with 1, everything that goes
    /// wrong while running with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::USAGE,
            CliError::Core(rnc_core::Error::Config(_) | rnc_core::Error::Argument(_)) => exit::USAGE,
            _ => exit::RUNTIME,
        }
    }
}
