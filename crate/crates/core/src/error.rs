use std::io;
use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corruption in {what}: {detail}")]
    Corruption { what: String, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid version edit: {0}")]
    VersionEdit(String),

    #[error("store is shut down")]
    ShutDown,

    #[error("compaction cancelled")]
    Cancelled,
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn corruption(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Corruption { what: what.into(), detail: detail.into() }
    }
}

/// Attaches a path to a bare `io::Result`.
pub trait IoResultExt<T> {
    fn at_path(self, path: &Path) -> Result<T>;
}

impl<T> IoResultExt<T> for io::Result<T> {
    fn at_path(self, path: &Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
