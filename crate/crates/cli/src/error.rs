use std::path::{Path, PathBuf};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing input {path}: {what}")]
    MissingInput { path: PathBuf, what: &'static str },
    #[error(transparent)]
    Core(#[from] astrolsm::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use astrolsm::Error as E;
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::MissingInput { .. } => EXIT_IO,
            CliError::Core(e) => match e {
                E::Io { .. } | E::Format { .. } => EXIT_IO,
                E::Divergence(_) | E::IntegrationFailure { .. } => EXIT_DIVERGENCE,
                _ => EXIT_CONFIG,
            },
        }
    }
}
