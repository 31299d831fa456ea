use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors from file formats, transports and the command line, plus
/// everything the attribution core can raise.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] infoattr_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    /// A file exists but its content is malformed or unsupported.
    #[error("format error: {0}")]
    Format(String),
    /// Invalid flags or specs on the command line.
    #[error("usage: {0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit status: 2 usage, 3 input/output (including malformed
    /// files), 4 external-model protocol or transport, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::Core(e) => match e.root() {
                infoattr_core::Error::Protocol(_) | infoattr_core::Error::Transport(_) => 4,
                _ => 1,
            },
        }
    }
}
