use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] coreselect::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use coreselect::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::State(_) => EXIT_DATA,
            Self::Io { .. } => EXIT_IO,
            Self::Core(e) => match e {
                E::Parameter(_) | E::Spec(_) | E::Size { .. } | E::Json(_) => EXIT_CONFIG,
                E::Degenerate(_) | E::SilhouetteUndefined => EXIT_NUMERIC,
                E::Io(_) => EXIT_IO,
                _ => EXIT_DATA,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
