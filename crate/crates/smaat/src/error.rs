use std::path::{Path, PathBuf};

/// Failures of the lab, grouped by the process exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Format {
        path: PathBuf,
        #[source]
        source: smaat_core::Error,
    },
    #[error("{}: metadata mismatch: {reason}", path.display())]
    MetaMismatch { path: PathBuf, reason: String },
    #[error("{}: malformed JSON: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("numerical failure: {0}")]
    Numerical(#[from] smaat_core::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, source: smaat_core::Error) -> Self {
        LabError::Format {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn meta(path: &Path, reason: impl Into<String>) -> Self {
        LabError::MetaMismatch {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Stable machine-readable name of the failure.
    pub fn code(&self) -> &'static str {
        use smaat_core::Error as E;
        match self {
            LabError::Config { .. } => "config",
            LabError::Io { .. } => "io",
            LabError::Format { source, .. } => match source {
                E::BadMagic { .. } => "bad_magic",
                E::Truncated { .. } => "truncated",
                E::TrailingBytes { .. } => "trailing_bytes",
                _ => "format",
            },
            LabError::MetaMismatch { .. } => "meta_mismatch",
            LabError::Json { .. } => "json",
            LabError::Numerical(_) => "numerical",
        }
    }

    /// 0 success, 2 config error, 3 numerical failure, 4 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config { .. } => 2,
            LabError::Numerical(_) => 3,
            LabError::Io { .. }
            | LabError::Format { .. }
            | LabError::MetaMismatch { .. }
            | LabError::Json { .. } => 4,
        }
    }
}
