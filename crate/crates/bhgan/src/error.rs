use std::io;
use std::path::{Path, PathBuf};

/// Errors from file handling and the command-line driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] bhgan_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(path: impl AsRef<Path>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.as_ref().to_path_buf(), msg: msg.into() }
    }

    /// Process exit status: 1 usage, 2 I/O or bad data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        use bhgan_core::Error as E;
        match self {
            Error::Usage(_) | Error::Core(E::Config(_) | E::Coverage(_)) => 1,
            Error::Core(E::Diverged { .. }) => 3,
            _ => 2,
        }
    }
}
